use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use super::layer::{self, Layer, LayerSpec};
use super::Tensor4;
use crate::error::{Error, Result};

/// A feed-forward network: layers applied in order, with optional
/// channel-concatenating skip edges from earlier layer outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
    /// Output shape of each layer.
    shapes: Vec<[usize; 3]>,
    /// Bumped on every parameter mutation; caches from older versions are stale.
    version: u64,
}

/// Activations recorded by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    version: u64,
    batch: usize,
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
    argmax: Vec<Option<Vec<u32>>>,
}

/// Parameter gradients (weights then bias, per parameterized layer) and the input gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    pub input: Tensor4,
}

impl Network {
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::invalid(format!(
                "network input shape {input_shape:?} has a zero dimension"
            )));
        }
        let mut shapes: Vec<[usize; 3]> = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            let input = if i == 0 { input_shape } else { shapes[i - 1] };
            let skip = match l {
                Layer::ConcatSkip { from } => {
                    if *from >= i {
                        return Err(Error::invalid(format!(
                            "layer {i} skips from layer {from}, which is not earlier"
                        )));
                    }
                    Some(shapes[*from])
                }
                _ => None,
            };
            let out = l
                .output_shape(input, skip)
                .map_err(|e| Error::invalid(format!("layer {i} ({}): {e}", l.name())))?;
            shapes.push(out);
        }
        Ok(Network {
            input_shape,
            layers,
            shapes,
            version: 0,
        })
    }

    /// Builds a network from specs with He-uniform weights drawn from a
    /// SplitMix64 stream seeded by `seed`; biases start at zero.
    pub fn init(input_shape: [usize; 3], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape;
        let mut shapes = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let l = Layer::init(spec, shape, &mut rng);
            let skip = match spec {
                LayerSpec::ConcatSkip { from } if *from < i => Some(shapes[*from]),
                _ => None,
            };
            shape = l.output_shape(shape, skip).unwrap_or(shape);
            shapes.push(shape);
            layers.push(l);
        }
        Network::new(input_shape, layers)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.shapes.last().copied().unwrap_or(self.input_shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Parameter tensors in canonical order.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv2d(c) => {
                    out.push(&c.weight);
                    out.push(&c.bias);
                }
                Layer::Dense(d) => {
                    out.push(&d.weight);
                    out.push(&d.bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Mutable parameter tensors; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.version += 1;
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv2d(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
                _ => {}
            }
        }
        out
    }

    fn in_shape(&self, i: usize) -> [usize; 3] {
        if i == 0 {
            self.input_shape
        } else {
            self.shapes[i - 1]
        }
    }

    /// Runs the network, keeping every activation for [`Network::backward`].
    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, Cache)> {
        if x.sample_shape() != self.input_shape {
            return Err(Error::invalid(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                x.sample_shape()
            )));
        }
        let batch = x.batch();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut argmax = Vec::with_capacity(self.layers.len());
        acts.push(x.data().to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let [c, h, w] = self.in_shape(i);
            let out_shape = self.shapes[i];
            let in_len = c * h * w;
            let out_len: usize = out_shape.iter().product();
            let input = &acts[i];
            let mut out = vec![0.0; batch * out_len];
            let mut am = None;
            match l {
                Layer::Conv2d(conv) => {
                    for n in 0..batch {
                        layer::conv_forward(
                            conv,
                            &input[n * in_len..(n + 1) * in_len],
                            h,
                            w,
                            &mut out[n * out_len..(n + 1) * out_len],
                        );
                    }
                }
                Layer::Relu => {
                    for (o, &v) in out.iter_mut().zip(input) {
                        *o = v.max(0.0);
                    }
                }
                Layer::Sigmoid => {
                    for (o, &v) in out.iter_mut().zip(input) {
                        *o = layer::sigmoid(v);
                    }
                }
                Layer::MaxPool2 => {
                    let mut idx = vec![0u32; batch * out_len];
                    for n in 0..batch {
                        layer::maxpool_forward(
                            &input[n * in_len..(n + 1) * in_len],
                            c,
                            h,
                            w,
                            &mut out[n * out_len..(n + 1) * out_len],
                            &mut idx[n * out_len..(n + 1) * out_len],
                        );
                    }
                    am = Some(idx);
                }
                Layer::Upsample2 => {
                    for n in 0..batch {
                        layer::upsample_forward(
                            &input[n * in_len..(n + 1) * in_len],
                            c,
                            h,
                            w,
                            &mut out[n * out_len..(n + 1) * out_len],
                        );
                    }
                }
                Layer::Dense(d) => {
                    for n in 0..batch {
                        layer::dense_forward(
                            d,
                            &input[n * in_len..(n + 1) * in_len],
                            &mut out[n * out_len..(n + 1) * out_len],
                        );
                    }
                }
                Layer::ConcatSkip { from } => {
                    let skip = &acts[from + 1];
                    let skip_len = out_len - in_len;
                    for n in 0..batch {
                        let dst = &mut out[n * out_len..(n + 1) * out_len];
                        dst[..in_len].copy_from_slice(&input[n * in_len..(n + 1) * in_len]);
                        dst[in_len..].copy_from_slice(&skip[n * skip_len..(n + 1) * skip_len]);
                    }
                }
            }
            acts.push(out);
            argmax.push(am);
        }
        let [c, h, w] = self.output_shape();
        let y = Tensor4::from_parts([batch, c, h, w], acts.last().cloned().unwrap_or_default());
        Ok((
            y,
            Cache {
                version: self.version,
                batch,
                acts,
                argmax,
            },
        ))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, x: &Tensor4) -> Result<Tensor4> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Exact gradients of `sum(grad_out * output)` with respect to every
    /// parameter and to the input.
    pub fn backward(&self, cache: &Cache, grad_out: &Tensor4) -> Result<Gradients> {
        if cache.version != self.version || cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::InvalidState(
                "cache was produced by a different parameter state".into(),
            ));
        }
        let batch = cache.batch;
        let [oc, oh, ow] = self.output_shape();
        if grad_out.dims() != [batch, oc, oh, ow] {
            return Err(Error::invalid(format!(
                "output gradient has dims {:?}, expected {:?}",
                grad_out.dims(),
                [batch, oc, oh, ow]
            )));
        }

        let mut param_grads: Vec<Vec<f64>> = self.params().iter().map(|p| vec![0.0; p.len()]).collect();
        let mut pidx = param_grads.len();
        // gradient flowing into the output of each layer from skip consumers
        let mut skip_grads: Vec<Option<Vec<f64>>> = vec![None; self.layers.len()];
        let mut g = grad_out.data().to_vec();

        for i in (0..self.layers.len()).rev() {
            if let Some(extra) = skip_grads[i].take() {
                for (a, b) in g.iter_mut().zip(extra) {
                    *a += b;
                }
            }
            let [c, h, w] = self.in_shape(i);
            let in_len = c * h * w;
            let out_len: usize = self.shapes[i].iter().product();
            let input = &cache.acts[i];
            let output = &cache.acts[i + 1];
            let mut gx = vec![0.0; batch * in_len];
            match &self.layers[i] {
                Layer::Conv2d(conv) => {
                    pidx -= 2;
                    let (gw, gb) = param_grads[pidx..pidx + 2].split_at_mut(1);
                    for n in 0..batch {
                        layer::conv_backward(
                            conv,
                            &input[n * in_len..(n + 1) * in_len],
                            h,
                            w,
                            &g[n * out_len..(n + 1) * out_len],
                            &mut gx[n * in_len..(n + 1) * in_len],
                            &mut gw[0],
                            &mut gb[0],
                        );
                    }
                }
                Layer::Dense(d) => {
                    pidx -= 2;
                    let (gw, gb) = param_grads[pidx..pidx + 2].split_at_mut(1);
                    for n in 0..batch {
                        layer::dense_backward(
                            d,
                            &input[n * in_len..(n + 1) * in_len],
                            &g[n * out_len..(n + 1) * out_len],
                            &mut gx[n * in_len..(n + 1) * in_len],
                            &mut gw[0],
                            &mut gb[0],
                        );
                    }
                }
                Layer::Relu => {
                    for ((gi, &go), &x) in gx.iter_mut().zip(&g).zip(input) {
                        *gi = if x > 0.0 { go } else { 0.0 };
                    }
                }
                Layer::Sigmoid => {
                    for ((gi, &go), &y) in gx.iter_mut().zip(&g).zip(output) {
                        *gi = go * y * (1.0 - y);
                    }
                }
                Layer::MaxPool2 => {
                    let am = cache.argmax[i]
                        .as_ref()
                        .ok_or_else(|| Error::InvalidState("missing pooling indices".into()))?;
                    for n in 0..batch {
                        let gxs = &mut gx[n * in_len..(n + 1) * in_len];
                        for j in 0..out_len {
                            gxs[am[n * out_len + j] as usize] += g[n * out_len + j];
                        }
                    }
                }
                Layer::Upsample2 => {
                    for n in 0..batch {
                        layer::upsample_backward(
                            &g[n * out_len..(n + 1) * out_len],
                            c,
                            h,
                            w,
                            &mut gx[n * in_len..(n + 1) * in_len],
                        );
                    }
                }
                Layer::ConcatSkip { from } => {
                    let skip_len = out_len - in_len;
                    let mut gs = vec![0.0; batch * skip_len];
                    for n in 0..batch {
                        let src = &g[n * out_len..(n + 1) * out_len];
                        gx[n * in_len..(n + 1) * in_len].copy_from_slice(&src[..in_len]);
                        gs[n * skip_len..(n + 1) * skip_len].copy_from_slice(&src[in_len..]);
                    }
                    match &mut skip_grads[*from] {
                        Some(acc) => acc.iter_mut().zip(gs).for_each(|(a, b)| *a += b),
                        slot => *slot = Some(gs),
                    }
                }
            }
            g = gx;
        }
        let [c, h, w] = self.input_shape;
        Ok(Gradients {
            params: param_grads,
            input: Tensor4::from_parts([batch, c, h, w], g),
        })
    }
}
