//! Single-image student networks distilled from teacher masks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{Frame, SoftMask, Window};
use crate::nn::{self, FitConfig, LayerSpec, Network, Tensor4};

pub const INPUT_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentKind {
    TinyLowres,
    TinyFconv,
    TinyUnet,
}

impl StudentKind {
    pub const ALL: [StudentKind; 3] = [
        StudentKind::TinyLowres,
        StudentKind::TinyFconv,
        StudentKind::TinyUnet,
    ];

    pub fn id(self) -> &'static str {
        match self {
            StudentKind::TinyLowres => "tiny_lowres",
            StudentKind::TinyFconv => "tiny_fconv",
            StudentKind::TinyUnet => "tiny_unet",
        }
    }

    pub fn default_widths(self) -> Vec<usize> {
        match self {
            StudentKind::TinyLowres | StudentKind::TinyFconv => vec![8, 16],
            StudentKind::TinyUnet => vec![4, 8, 16],
        }
    }

    fn width_count(self) -> usize {
        self.default_widths().len()
    }
}

impl fmt::Display for StudentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for StudentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StudentKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown student architecture {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentArch {
    pub kind: StudentKind,
    pub widths: Vec<usize>,
}

impl StudentArch {
    pub fn new(kind: StudentKind, widths: Vec<usize>) -> Result<Self> {
        let arch = StudentArch { kind, widths };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != self.kind.width_count() || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "{} needs {} positive channel widths, got {:?}",
                self.kind,
                self.kind.width_count(),
                self.widths
            )));
        }
        Ok(())
    }

    pub fn default_for(kind: StudentKind) -> Self {
        StudentArch {
            kind,
            widths: kind.default_widths(),
        }
    }

    pub fn id(&self) -> &'static str {
        self.kind.id()
    }

    /// `(width, height)` of the predicted mask.
    pub fn output_dims(&self) -> (usize, usize) {
        match self.kind {
            StudentKind::TinyLowres => (INPUT_SIZE / 4, INPUT_SIZE / 4),
            _ => (INPUT_SIZE, INPUT_SIZE),
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [3, INPUT_SIZE, INPUT_SIZE]
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        use LayerSpec::*;
        let w = &self.widths;
        let conv = |out_channels, stride| Conv {
            out_channels,
            stride,
        };
        let (ow, oh) = self.output_dims();
        match self.kind {
            StudentKind::TinyLowres => vec![
                conv(w[0], 2),
                Relu,
                conv(w[1], 2),
                Relu,
                conv(w[1], 1),
                Relu, // 5: local features at output resolution
                MaxPool2,
                MaxPool2,
                Dense {
                    out_shape: [1, oh, ow],
                },
                ConcatSkip { from: 5 },
                conv(w[0], 1),
                Relu,
                conv(1, 1),
                Sigmoid,
            ],
            StudentKind::TinyFconv => vec![
                conv(w[0], 2),
                Relu,
                conv(w[1], 2),
                Relu,
                conv(w[1], 1),
                Relu,
                Upsample2,
                conv(w[0], 1),
                Relu,
                Upsample2,
                conv(1, 1),
                Sigmoid,
            ],
            StudentKind::TinyUnet => vec![
                conv(w[0], 1),
                Relu, // 1: full resolution features
                conv(w[1], 2),
                Relu, // 3: half resolution features
                conv(w[2], 2),
                Relu,
                Upsample2,
                ConcatSkip { from: 3 },
                conv(w[1], 1),
                Relu,
                Upsample2,
                ConcatSkip { from: 1 },
                conv(1, 1),
                Sigmoid,
            ],
        }
    }

    pub fn init(&self, seed: u64) -> Result<StudentNet> {
        let net = Network::init(self.input_shape(), &self.layer_specs(), seed)?;
        Ok(StudentNet {
            arch: self.clone(),
            net,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    pub crop_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            epochs: 10,
            batch_size: 1,
            seed: 0,
            augment: true,
            crop_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.fit_config().validate()?;
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::Config("crop_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

/// Eq. 1: mean over samples of the per-pixel squared error sum.
pub fn l2_loss(pred: &[SoftMask], target: &[SoftMask]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid(format!(
            "loss over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if p.dims() != t.dims() {
            return Err(Error::invalid(format!(
                "prediction {:?} and target {:?} differ in size",
                p.dims(),
                t.dims()
            )));
        }
        total += p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / pred.len() as f64)
}

/// Planar `(3, h, w)` layout of a frame resized to `w`x`h`.
pub(crate) fn frame_planes(frame: &Frame, w: usize, h: usize) -> Result<Vec<f64>> {
    let f;
    let f = if frame.dims() == (w, h) {
        frame
    } else {
        f = frame.resize_bilinear(w, h)?;
        &f
    };
    let mut out = vec![0.0; 3 * w * h];
    for (i, px) in f.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * w * h + i] = px[c];
        }
    }
    Ok(out)
}

fn resized_mask(m: &SoftMask, w: usize, h: usize) -> Result<Vec<f64>> {
    Ok(if m.dims() == (w, h) {
        m.data().to_vec()
    } else {
        m.resize_bilinear(w, h)?.into_data()
    })
}

/// Crop size for one axis: `round(fraction * n)`, at least 1.
pub fn crop_extent(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

/// Crops the frame window starting at `(x0, y0)` and the matching mask
/// region, then rescales them to `input` and `output` sizes.
pub fn augment_at(
    frame: &Frame,
    mask: &SoftMask,
    crop_fraction: f64,
    x0: usize,
    y0: usize,
    input: (usize, usize),
    output: (usize, usize),
) -> Result<(Frame, SoftMask)> {
    let (fw, fh) = frame.dims();
    let (cw, ch) = (crop_extent(fw, crop_fraction), crop_extent(fh, crop_fraction));
    if x0 + cw > fw || y0 + ch > fh {
        return Err(Error::invalid(format!(
            "crop at ({x0}, {y0}) of size {cw}x{ch} leaves the {fw}x{fh} frame"
        )));
    }
    let win = Window::pixels(x0, y0, cw, ch);
    let f = frame.resample(win, input.0, input.1)?;
    let m = mask.resample(win.rescale((fw, fh), mask.dims()), output.0, output.1)?;
    Ok((f, m))
}

/// Random crop covering `crop_fraction` of each side, applied to both images.
pub fn augment(
    frame: &Frame,
    mask: &SoftMask,
    crop_fraction: f64,
    input: (usize, usize),
    output: (usize, usize),
    rng: &mut SplitMix64,
) -> Result<(Frame, SoftMask)> {
    let (fw, fh) = frame.dims();
    let (cw, ch) = (crop_extent(fw, crop_fraction), crop_extent(fh, crop_fraction));
    let x0 = rng.random_range(0..=fw - cw);
    let y0 = rng.random_range(0..=fh - ch);
    augment_at(frame, mask, crop_fraction, x0, y0, input, output)
}

/// A trained (or initialized) student with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentNet {
    pub arch: StudentArch,
    pub net: Network,
}

impl StudentNet {
    pub fn predict(&self, frame: &Frame) -> Result<SoftMask> {
        let x = Tensor4::new([1, 3, INPUT_SIZE, INPUT_SIZE], frame_planes(frame, INPUT_SIZE, INPUT_SIZE)?)?;
        let y = self.net.predict(&x)?;
        let (w, h) = self.arch.output_dims();
        Ok(SoftMask::from_raw_clamped(w, h, y.into_data()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        nn::save_weights(&self.net, path)
    }

    /// Loads weights and checks they fit `arch`.
    pub fn load(path: impl AsRef<Path>, arch: &StudentArch) -> Result<Self> {
        let path = path.as_ref();
        let net = nn::load_weights(path)?;
        let expected = Network::init(arch.input_shape(), &arch.layer_specs(), 0)?;
        let same_shape = net.input_shape() == expected.input_shape()
            && net.layers().len() == expected.layers().len()
            && net
                .params()
                .iter()
                .zip(expected.params())
                .all(|(a, b)| a.len() == b.len())
            && net.params().len() == expected.params().len();
        if !same_shape {
            return Err(Error::CorruptWeights(format!(
                "{} does not hold a {} network",
                path.display(),
                arch.id()
            )));
        }
        Ok(StudentNet {
            arch: arch.clone(),
            net,
        })
    }
}

pub fn predict(net: &StudentNet, frame: &Frame) -> Result<SoftMask> {
    net.predict(frame)
}

/// Trains a student on `(frame, teacher mask)` pairs. Returns the network and
/// the per-epoch loss trace.
pub fn train_student(
    arch: &StudentArch,
    pairs: &[(Frame, SoftMask)],
    cfg: &TrainConfig,
) -> Result<(StudentNet, Vec<f64>)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    let mut student = arch.init(cfg.seed)?;
    let (ow, oh) = arch.output_dims();
    let in_len = 3 * INPUT_SIZE * INPUT_SIZE;
    let out_len = ow * oh;
    let trace = nn::fit(&mut student.net, pairs.len(), &cfg.fit_config(), |idx, rng| {
        let mut x = Vec::with_capacity(idx.len() * in_len);
        let mut y = Vec::with_capacity(idx.len() * out_len);
        for &i in idx {
            let (frame, mask) = &pairs[i];
            if cfg.augment {
                let (f, m) = augment(
                    frame,
                    mask,
                    cfg.crop_fraction,
                    (INPUT_SIZE, INPUT_SIZE),
                    (ow, oh),
                    rng,
                )?;
                x.extend(frame_planes(&f, INPUT_SIZE, INPUT_SIZE)?);
                y.extend(m.into_data());
            } else {
                x.extend(frame_planes(frame, INPUT_SIZE, INPUT_SIZE)?);
                y.extend(resized_mask(mask, ow, oh)?);
            }
        }
        Ok((
            Tensor4::new([idx.len(), 3, INPUT_SIZE, INPUT_SIZE], x)?,
            Tensor4::new([idx.len(), 1, oh, ow], y)?,
        ))
    })?;
    Ok((student, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn architectures_have_expected_output_sizes() {
        for kind in StudentKind::ALL {
            let arch = StudentArch::default_for(kind);
            let s = arch.init(1).unwrap();
            let (w, h) = arch.output_dims();
            assert_eq!(s.net.output_shape(), [1, h, w]);
            let f = Frame::from_fn(50, 40, |x, y| [x as f64 / 50.0, y as f64 / 40.0, 0.5]).unwrap();
            let m = s.predict(&f).unwrap();
            assert_eq!(m.dims(), (w, h));
            assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(m, s.predict(&f).unwrap());
            assert_eq!(kind.id().parse::<StudentKind>().unwrap(), kind);
        }
        assert!(StudentArch::new(StudentKind::TinyUnet, vec![4, 8]).is_err());
    }

    #[test]
    fn zeroed_student_predicts_one_half() {
        for kind in StudentKind::ALL {
            let mut s = StudentArch::default_for(kind).init(3).unwrap();
            for p in s.net.params_mut() {
                p.fill(0.0);
            }
            let f = Frame::filled(64, 64, [0.3, 0.7, 0.1]).unwrap();
            assert!(s.predict(&f).unwrap().data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn l2_loss_examples() {
        let a = SoftMask::new(2, 1, vec![0.5, 0.5]).unwrap();
        let b = SoftMask::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(l2_loss(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(), 0.0);
        assert_eq!(l2_loss(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap(), 0.5);
        assert_eq!(
            l2_loss(&[a.clone(), a.clone()], &[b.clone(), b.clone()]).unwrap(),
            0.5
        );
        let c = SoftMask::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert!(l2_loss(std::slice::from_ref(&a), &[c]).is_err());
        assert!(l2_loss(&[a], &[]).is_err());
    }

    #[test]
    fn augment_examples() {
        let f = Frame::from_fn(10, 10, |x, y| [x as f64 / 9.0, y as f64 / 9.0, 0.0]).unwrap();
        let m = SoftMask::from_fn(10, 10, |x, y| if x == 9 && y == 9 { 1.0 } else { 0.0 }).unwrap();
        // full crop is a plain resize
        let (af, am) = augment_at(&f, &m, 1.0, 0, 0, (10, 10), (10, 10)).unwrap();
        assert_eq!(af, f);
        assert_eq!(am, m);
        // corner crop loses the opposite-corner object
        let (_, am) = augment_at(&f, &m, 0.8, 0, 0, (16, 16), (4, 4)).unwrap();
        assert!(am.data().iter().all(|&v| v == 0.0));
        // but keeps it when anchored at that corner
        let (_, am) = augment_at(&f, &m, 0.8, 2, 2, (8, 8), (8, 8)).unwrap();
        assert_eq!(am.get(7, 7), 1.0);
        assert!(augment_at(&f, &m, 0.8, 3, 0, (8, 8), (8, 8)).is_err());

        let run = || {
            let mut rng = SplitMix64::seed_from_u64(5);
            augment(&f, &m, 0.8, (12, 12), (6, 6), &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mask_window_follows_frame_window() {
        // mask at a quarter of the frame resolution
        let f = Frame::filled(20, 20, [0.5; 3]).unwrap();
        let fine = SoftMask::from_fn(20, 20, |x, _| x as f64 / 19.0).unwrap();
        let coarse = fine.resize_bilinear(5, 5).unwrap();
        let (_, a) = augment_at(&f, &fine, 0.8, 4, 0, (8, 8), (4, 4)).unwrap();
        let (_, b) = augment_at(&f, &coarse, 0.8, 4, 0, (8, 8), (4, 4)).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_targets_are_learned() {
        let arch = StudentArch::new(StudentKind::TinyFconv, vec![4, 4]).unwrap();
        let pairs: Vec<(Frame, SoftMask)> = (0..8)
            .map(|i| {
                let f = Frame::from_fn(64, 64, |x, y| {
                    [((x + i) % 7) as f64 / 7.0, ((y * 3 + i) % 5) as f64 / 5.0, 0.4]
                })
                .unwrap();
                (f, SoftMask::filled(64, 64, 0.3).unwrap())
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 150,
            batch_size: 4,
            lr: 0.01,
            augment: false,
            ..Default::default()
        };
        let (s, trace) = train_student(&arch, &pairs, &cfg).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
        for (f, _) in &pairs {
            let m = s.predict(f).unwrap();
            let worst = m.data().iter().map(|v| (v - 0.3).abs()).fold(0.0, f64::max);
            assert!(worst < 0.05, "worst {worst}, trace {trace:?}");
        }
    }

    #[test]
    fn save_load_checks_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.fgdn");
        let arch = StudentArch::default_for(StudentKind::TinyLowres);
        let s = arch.init(9).unwrap();
        s.save(&p).unwrap();
        assert_eq!(StudentNet::load(&p, &arch).unwrap(), s);
        let other = StudentArch::default_for(StudentKind::TinyFconv);
        assert!(matches!(
            StudentNet::load(&p, &other),
            Err(Error::CorruptWeights(_))
        ));
    }
}
