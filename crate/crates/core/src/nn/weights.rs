//! Binary weight file.
//!
//! Little-endian layout: magic `FGDN`, format version `u32`, entry count
//! `u32`, then per entry a kind tag `u32`, a dim count `u32`, the dims as
//! `u32`, and the entry's parameters as `f64`. The first entry is always the
//! input shape (tag 0, dims `[c, h, w]`, no parameters).

use std::fs;
use std::path::Path;

use super::layer::{Conv2d, Dense, Layer};
use super::network::Network;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FGDN";
pub const FORMAT_VERSION: u32 = 1;

const TAG_INPUT: u32 = 0;
const TAG_CONV: u32 = 1;
const TAG_RELU: u32 = 2;
const TAG_MAXPOOL: u32 = 3;
const TAG_UPSAMPLE: u32 = 4;
const TAG_DENSE: u32 = 5;
const TAG_SIGMOID: u32 = 6;
const TAG_CONCAT: u32 = 7;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_entry(buf: &mut Vec<u8>, tag: u32, dims: &[usize], params: &[&[f64]]) {
    put_u32(buf, tag);
    put_u32(buf, dims.len() as u32);
    for &d in dims {
        put_u32(buf, d as u32);
    }
    for p in params {
        for v in *p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + net.param_count() * 8);
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, (net.layers().len() + 1) as u32);
    put_entry(&mut buf, TAG_INPUT, &net.input_shape(), &[]);
    for l in net.layers() {
        match l {
            Layer::Conv2d(c) => put_entry(
                &mut buf,
                TAG_CONV,
                &[c.out_channels, c.in_channels, 3, 3, c.stride],
                &[&c.weight, &c.bias],
            ),
            Layer::Relu => put_entry(&mut buf, TAG_RELU, &[], &[]),
            Layer::MaxPool2 => put_entry(&mut buf, TAG_MAXPOOL, &[], &[]),
            Layer::Upsample2 => put_entry(&mut buf, TAG_UPSAMPLE, &[], &[]),
            Layer::Dense(d) => put_entry(
                &mut buf,
                TAG_DENSE,
                &[d.out_shape[0], d.out_shape[1], d.out_shape[2], d.in_features],
                &[&d.weight, &d.bias],
            ),
            Layer::Sigmoid => put_entry(&mut buf, TAG_SIGMOID, &[], &[]),
            Layer::ConcatSkip { from } => put_entry(&mut buf, TAG_CONCAT, &[*from], &[]),
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptWeights(format!(
                "file truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::CorruptWeights("parameter count overflows".into())
        })?)?;
        let vals: Vec<f64> = b
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptWeights("non-finite parameter".into()));
        }
        Ok(vals)
    }
}

fn expect_dims(tag: u32, dims: &[usize], n: usize) -> Result<()> {
    if dims.len() != n {
        return Err(Error::CorruptWeights(format!(
            "entry tag {tag} has {} dims, expected {n}",
            dims.len()
        )));
    }
    Ok(())
}

pub fn from_bytes(buf: &[u8]) -> Result<Network> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptWeights("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CorruptWeights(format!(
            "unsupported format version {version}"
        )));
    }
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::CorruptWeights("missing input entry".into()));
    }
    let mut input_shape = None;
    let mut layers = Vec::with_capacity(count - 1);
    for i in 0..count {
        let tag = r.u32()?;
        let ndims = r.u32()? as usize;
        if ndims > 16 {
            return Err(Error::CorruptWeights(format!("entry {i} claims {ndims} dims")));
        }
        let dims = (0..ndims)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if i == 0 {
            if tag != TAG_INPUT {
                return Err(Error::CorruptWeights("first entry is not the input shape".into()));
            }
            expect_dims(tag, &dims, 3)?;
            input_shape = Some([dims[0], dims[1], dims[2]]);
            continue;
        }
        let layer = match tag {
            TAG_CONV => {
                expect_dims(tag, &dims, 5)?;
                let (out, inp, stride) = (dims[0], dims[1], dims[4]);
                if dims[2] != 3 || dims[3] != 3 {
                    return Err(Error::CorruptWeights("only 3x3 kernels are supported".into()));
                }
                let weight = r.f64s(out * inp * 9)?;
                let bias = r.f64s(out)?;
                Layer::Conv2d(Conv2d {
                    in_channels: inp,
                    out_channels: out,
                    stride,
                    weight,
                    bias,
                })
            }
            TAG_DENSE => {
                expect_dims(tag, &dims, 4)?;
                let out_shape = [dims[0], dims[1], dims[2]];
                let out: usize = out_shape.iter().product();
                let weight = r.f64s(out * dims[3])?;
                let bias = r.f64s(out)?;
                Layer::Dense(Dense {
                    in_features: dims[3],
                    out_shape,
                    weight,
                    bias,
                })
            }
            TAG_CONCAT => {
                expect_dims(tag, &dims, 1)?;
                Layer::ConcatSkip { from: dims[0] }
            }
            TAG_RELU | TAG_MAXPOOL | TAG_UPSAMPLE | TAG_SIGMOID => {
                expect_dims(tag, &dims, 0)?;
                match tag {
                    TAG_RELU => Layer::Relu,
                    TAG_MAXPOOL => Layer::MaxPool2,
                    TAG_UPSAMPLE => Layer::Upsample2,
                    _ => Layer::Sigmoid,
                }
            }
            other => {
                return Err(Error::CorruptWeights(format!("unknown layer tag {other}")));
            }
        };
        layers.push(layer);
    }
    if r.pos != buf.len() {
        return Err(Error::CorruptWeights(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    let input_shape = input_shape.expect("input entry parsed above");
    Network::new(input_shape, layers).map_err(|e| Error::CorruptWeights(e.to_string()))
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
