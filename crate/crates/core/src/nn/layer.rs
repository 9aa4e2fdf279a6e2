//! Layer kinds and their forward/backward kernels. All kernels operate on a
//! single sample laid out as `(channels, height, width)`.

use rand::Rng;

use crate::error::{Error, Result};

/// Layer description without parameters, used to build networks.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// 3x3 convolution with zero "same" padding.
    Conv { out_channels: usize, stride: usize },
    Relu,
    MaxPool2,
    /// Nearest-neighbour 2x upsampling.
    Upsample2,
    /// Fully connected layer whose output is reshaped to `(c, h, w)`.
    Dense { out_shape: [usize; 3] },
    Sigmoid,
    /// Appends the output of layer `from` to the current activation along the channel axis.
    ConcatSkip { from: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// `[out][in][3][3]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_features: usize,
    pub out_shape: [usize; 3],
    /// `[out][in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn out_features(&self) -> usize {
        self.out_shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu,
    MaxPool2,
    Upsample2,
    Dense(Dense),
    Sigmoid,
    ConcatSkip { from: usize },
}

pub(crate) fn conv_out(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

impl Layer {
    /// Instantiates `spec` for an input of `shape`, drawing He-uniform weights.
    pub(crate) fn init<R: Rng>(spec: &LayerSpec, shape: [usize; 3], rng: &mut R) -> Layer {
        match *spec {
            LayerSpec::Conv {
                out_channels,
                stride,
            } => {
                let fan_in = shape[0] * 9;
                let limit = (6.0 / fan_in as f64).sqrt();
                let weight = (0..out_channels * fan_in)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Layer::Conv2d(Conv2d {
                    in_channels: shape[0],
                    out_channels,
                    stride,
                    weight,
                    bias: vec![0.0; out_channels],
                })
            }
            LayerSpec::Dense { out_shape } => {
                let in_features: usize = shape.iter().product();
                let out: usize = out_shape.iter().product();
                let limit = (6.0 / in_features as f64).sqrt();
                let weight = (0..out * in_features)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Layer::Dense(Dense {
                    in_features,
                    out_shape,
                    weight,
                    bias: vec![0.0; out],
                })
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2 => Layer::MaxPool2,
            LayerSpec::Upsample2 => Layer::Upsample2,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::ConcatSkip { from } => Layer::ConcatSkip { from },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2 => "maxpool2",
            Layer::Upsample2 => "upsample2",
            Layer::Dense(_) => "dense",
            Layer::Sigmoid => "sigmoid",
            Layer::ConcatSkip { .. } => "concat_skip",
        }
    }

    /// Output shape for `input`; `skip` is the shape of the concatenated
    /// source for [`Layer::ConcatSkip`].
    pub(crate) fn output_shape(
        &self,
        input: [usize; 3],
        skip: Option<[usize; 3]>,
    ) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        match self {
            Layer::Conv2d(conv) => {
                if conv.in_channels != c {
                    return Err(Error::invalid(format!(
                        "conv expects {} input channels, got {c}",
                        conv.in_channels
                    )));
                }
                if !(conv.stride == 1 || conv.stride == 2) {
                    return Err(Error::invalid(format!(
                        "conv stride must be 1 or 2, got {}",
                        conv.stride
                    )));
                }
                if conv.weight.len() != conv.out_channels * c * 9
                    || conv.bias.len() != conv.out_channels
                {
                    return Err(Error::invalid("conv parameter sizes are inconsistent"));
                }
                Ok([
                    conv.out_channels,
                    conv_out(h, conv.stride),
                    conv_out(w, conv.stride),
                ])
            }
            Layer::Relu | Layer::Sigmoid => Ok(input),
            Layer::MaxPool2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::invalid(format!(
                        "maxpool2 needs even spatial dims, got {h}x{w}"
                    )));
                }
                Ok([c, h / 2, w / 2])
            }
            Layer::Upsample2 => Ok([c, h * 2, w * 2]),
            Layer::Dense(d) => {
                if d.in_features != c * h * w {
                    return Err(Error::invalid(format!(
                        "dense expects {} inputs, got {}",
                        d.in_features,
                        c * h * w
                    )));
                }
                if d.weight.len() != d.out_features() * d.in_features
                    || d.bias.len() != d.out_features()
                {
                    return Err(Error::invalid("dense parameter sizes are inconsistent"));
                }
                Ok(d.out_shape)
            }
            Layer::ConcatSkip { .. } => {
                let [sc, sh, sw] =
                    skip.ok_or_else(|| Error::invalid("concat skip has no source"))?;
                if (sh, sw) != (h, w) {
                    return Err(Error::invalid(format!(
                        "concat skip joins {h}x{w} with {sh}x{sw}"
                    )));
                }
                Ok([c + sc, h, w])
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            _ => 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution

/// Zero-padded input split into `stride x stride` phase planes, so that every
/// kernel tap reads one contiguous run. Output positions use a row pitch of
/// `pitch`; the columns at and beyond `ow` are scratch.
struct Phased {
    s: usize,
    pitch: usize,
    /// `[channel][phase_y][phase_x]` planes of `plane` values each.
    data: Vec<f64>,
    plane: usize,
}

impl Phased {
    fn layout(c: usize, h: usize, w: usize, s: usize) -> Phased {
        let pitch = (w + 2).div_ceil(s);
        let rows = (h + 2).div_ceil(s);
        // one spare row covers the scratch columns of the last output row
        let plane = (rows + 1) * pitch;
        Phased {
            s,
            pitch,
            data: vec![0.0; c * s * s * plane],
            plane,
        }
    }

    fn new(x: &[f64], c: usize, h: usize, w: usize, s: usize) -> Phased {
        let mut p = Phased::layout(c, h, w, s);
        for ch in 0..c {
            for iy in 0..h {
                let src = &x[(ch * h + iy) * w..(ch * h + iy + 1) * w];
                for (k, run) in p.runs(ch, iy + 1, w) {
                    for (d, &v) in p.data[k..].iter_mut().zip(src[run].iter().step_by(s)) {
                        *d = v;
                    }
                }
            }
        }
        p
    }

    /// For padded row `py`, each column phase as (start in `data`, first input column).
    fn runs(&self, ch: usize, py: usize, w: usize) -> Vec<(usize, std::ops::RangeFrom<usize>)> {
        let s = self.s;
        (0..s.min(w))
            .map(|j| {
                let px = j + 1;
                (self.index(ch, py % s, px % s) + (py / s) * self.pitch + px / s, j..)
            })
            .collect()
    }

    fn index(&self, ch: usize, ry: usize, rx: usize) -> usize {
        ((ch * self.s + ry) * self.s + rx) * self.plane
    }

    /// Start of the run read by tap `(ky, kx)` of channel `ch`.
    fn tap(&self, ch: usize, ky: usize, kx: usize) -> usize {
        self.index(ch, ky % self.s, kx % self.s) + (ky / self.s) * self.pitch + kx / self.s
    }

    /// Inverse of [`Phased::new`]: gathers the interior back to `(c, h, w)`.
    fn unpad(&self, c: usize, h: usize, w: usize, out: &mut [f64]) {
        let s = self.s;
        for ch in 0..c {
            for iy in 0..h {
                let dst = &mut out[(ch * h + iy) * w..(ch * h + iy + 1) * w];
                for (k, run) in self.runs(ch, iy + 1, w) {
                    for (d, &v) in dst[run].iter_mut().step_by(s).zip(&self.data[k..]) {
                        *d = v;
                    }
                }
            }
        }
    }

    /// im2col over the phase planes: row `(i, ky, kx)` is the run read by that tap.
    fn columns(&self, cin: usize, len: usize) -> Vec<f64> {
        let mut col = Vec::with_capacity(cin * 9 * len);
        for r in 0..cin * 9 {
            let t = self.tap(r / 9, r % 9 / 3, r % 3);
            col.extend_from_slice(&self.data[t..t + len]);
        }
        col
    }
}

/// `c = a * b + beta * c` for row-major `a` (m x k) and `b` (k x n), with
/// explicit strides for `a` and `b` so transposes come for free.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_rs: usize, a_cs: usize, b: &[f64], b_rs: usize, b_cs: usize, beta: f64, c: &mut [f64]) {
    assert!(a.len() > (m - 1) * a_rs + (k - 1) * a_cs);
    assert!(b.len() > (k - 1) * b_rs + (n - 1) * b_cs);
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above bound every index touched for these strides.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), a_rs as isize, a_cs as isize,
            b.as_ptr(), b_rs as isize, b_cs as isize,
            beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

pub(crate) fn conv_forward(conv: &Conv2d, x: &[f64], h: usize, w: usize, out: &mut [f64]) {
    let s = conv.stride;
    let (oh, ow) = (conv_out(h, s), conv_out(w, s));
    let (cin, cout) = (conv.in_channels, conv.out_channels);
    let xp = Phased::new(x, cin, h, w, s);
    let len = oh * xp.pitch;
    let kk = cin * 9;
    let col = xp.columns(cin, len);
    let acc_rows = conv.bias.iter().flat_map(|&b| std::iter::repeat_n(b, len));
    let mut acc: Vec<f64> = acc_rows.collect();
    gemm(cout, kk, len, &conv.weight, kk, 1, &col, len, 1, 1.0, &mut acc);
    for (plane, src) in out.chunks_exact_mut(oh * ow).zip(acc.chunks_exact(len)) {
        for (dst, r) in plane.chunks_exact_mut(ow).zip(src.chunks_exact(xp.pitch)) {
            dst.copy_from_slice(&r[..ow]);
        }
    }
}

/// Accumulates parameter gradients into `gw`/`gb` and writes the input gradient to `gx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    conv: &Conv2d,
    x: &[f64],
    h: usize,
    w: usize,
    gout: &[f64],
    gx: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let s = conv.stride;
    let (oh, ow) = (conv_out(h, s), conv_out(w, s));
    let (cin, cout) = (conv.in_channels, conv.out_channels);
    let xp = Phased::new(x, cin, h, w, s);
    let len = oh * xp.pitch;
    let kk = cin * 9;
    let col = xp.columns(cin, len);
    // output gradient at the padded pitch, zero in the scratch columns
    let mut g = vec![0.0; cout * len];
    for ((dst, go), b) in g.chunks_exact_mut(len).zip(gout.chunks_exact(oh * ow)).zip(gb.iter_mut()) {
        *b += go.iter().sum::<f64>();
        for (d, r) in dst.chunks_exact_mut(xp.pitch).zip(go.chunks_exact(ow)) {
            d[..ow].copy_from_slice(r);
        }
    }
    gemm(cout, len, kk, &g, len, 1, &col, 1, len, 1.0, gw);
    let mut gcol = col;
    gemm(kk, cout, len, &conv.weight, 1, kk, &g, len, 1, 0.0, &mut gcol);
    let mut gp = Phased::layout(cin, h, w, s);
    for (r, row) in gcol.chunks_exact(len).enumerate() {
        let t = gp.tap(r / 9, r % 9 / 3, r % 3);
        for (d, &v) in gp.data[t..t + len].iter_mut().zip(row) {
            *d += v;
        }
    }
    gp.unpad(cin, h, w, gx);
}

// ---------------------------------------------------------------------------
// Dense

pub(crate) fn dense_forward(d: &Dense, x: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let row = &d.weight[j * d.in_features..(j + 1) * d.in_features];
        *o = d.bias[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub(crate) fn dense_backward(
    d: &Dense,
    x: &[f64],
    gout: &[f64],
    gx: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
) {
    gx.fill(0.0);
    for (j, &g) in gout.iter().enumerate() {
        gb[j] += g;
        if g == 0.0 {
            continue;
        }
        let row = &d.weight[j * d.in_features..(j + 1) * d.in_features];
        let grow = &mut gw[j * d.in_features..(j + 1) * d.in_features];
        for k in 0..d.in_features {
            grow[k] += g * x[k];
            gx[k] += g * row[k];
        }
    }
}

// ---------------------------------------------------------------------------
// Pooling and resampling

/// Writes pooled values and the flat input index each came from.
pub(crate) fn maxpool_forward(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                let mut best_v = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > best_v {
                            best_v = x[idx];
                            best = idx;
                        }
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                out[o] = best_v;
                argmax[o] = best as u32;
            }
        }
    }
}

pub(crate) fn upsample_forward(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (oh, ow) = (h * 2, w * 2);
    for ch in 0..c {
        for oy in 0..oh {
            let src = &x[ch * h * w + (oy / 2) * w..ch * h * w + (oy / 2 + 1) * w];
            let dst = &mut out[ch * oh * ow + oy * ow..ch * oh * ow + (oy + 1) * ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / 2];
            }
        }
    }
}

pub(crate) fn upsample_backward(gout: &[f64], c: usize, h: usize, w: usize, gx: &mut [f64]) {
    let (oh, ow) = (h * 2, w * 2);
    gx.fill(0.0);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                gx[ch * h * w + (oy / 2) * w + ox / 2] += gout[ch * oh * ow + oy * ow + ox];
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
