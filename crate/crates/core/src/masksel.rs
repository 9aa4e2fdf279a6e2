//! Scoring and selection of candidate masks: the mean-of-nonzero heuristic
//! and a learned mask-quality evaluator.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{Frame, ScoredMask, SoftMask};
use crate::nn::{self, FitConfig, LayerSpec, Network, Tensor4};
use crate::student::frame_planes;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelectionPolicy {
    Percentile { keep: f64 },
    Threshold { tau: f64 },
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionPolicy::Percentile { keep } if !(keep > 0.0 && keep <= 1.0) => {
                Err(Error::Config(format!("percentile keep {keep} not in (0, 1]")))
            }
            SelectionPolicy::Threshold { tau } if !(0.0..=1.0).contains(&tau) => {
                Err(Error::Config(format!("threshold tau {tau} not in [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, masks: Vec<ScoredMask>) -> Result<Vec<ScoredMask>> {
        self.validate()?;
        match *self {
            SelectionPolicy::Percentile { keep } => percentile_select(masks, keep),
            SelectionPolicy::Threshold { tau } => Ok(select_at_least(masks, tau)),
        }
    }
}

/// Mean of the strictly positive pixels; 0 for an all-zero mask.
pub fn mean_nonzero_score(m: &SoftMask) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for &v in m.data() {
        if v > 0.0 {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Selection rank: score descending, then frame id, then source. Arguments
/// are `(score, frame_id, source)`.
pub fn rank_cmp(a: (f64, &str, &str), b: (f64, &str, &str)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.cmp(b.1))
        .then_with(|| a.2.cmp(b.2))
}

fn rank(masks: &mut [ScoredMask]) {
    masks.sort_by(|a, b| {
        rank_cmp(
            (a.score, &a.frame_id, &a.source),
            (b.score, &b.frame_id, &b.source),
        )
    });
}

/// How many of `n` items a percentile policy keeps: `ceil(keep * n)`.
pub fn keep_count(n: usize, keep: f64) -> usize {
    ((keep * n as f64).ceil() as usize).min(n)
}

/// The `ceil(keep * n)` best masks in rank order.
pub fn percentile_select(mut masks: Vec<ScoredMask>, keep: f64) -> Result<Vec<ScoredMask>> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::invalid(format!("keep fraction {keep} not in (0, 1]")));
    }
    let n = keep_count(masks.len(), keep);
    rank(&mut masks);
    masks.truncate(n);
    Ok(masks)
}

/// Masks with score >= `tau`, in rank order.
pub fn select_at_least(mut masks: Vec<ScoredMask>, tau: f64) -> Vec<ScoredMask> {
    masks.retain(|m| m.score >= tau);
    rank(&mut masks);
    masks
}

/// `a.b / (|a| |b|)`; 0 when either mask is all zero.
pub fn cosine_similarity(a: &SoftMask, b: &SoftMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "cosine similarity of {:?} and {:?} masks",
            a.dims(),
            b.dims()
        )));
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrainingPair {
    pub frame: Frame,
    pub candidate: SoftMask,
    /// Cosine similarity of the candidate to the ensemble mask.
    pub target: f64,
}

/// One pair per (frame, candidate), targets measured against the frame's
/// ensemble mask. Frames without an ensemble mask are skipped. Candidates are
/// resampled onto the ensemble grid when sizes differ.
pub fn make_eval_pairs(
    frames: &[Frame],
    candidates: &[Vec<SoftMask>],
    ensemble: &[Option<SoftMask>],
) -> Result<Vec<EvalTrainingPair>> {
    if frames.len() != candidates.len() || frames.len() != ensemble.len() {
        return Err(Error::invalid("frames, candidates and ensemble masks differ in count"));
    }
    let mut out = Vec::new();
    for (i, ((frame, cands), ens)) in frames.iter().zip(candidates).zip(ensemble).enumerate() {
        let Some(ens) = ens else {
            log::warn!("frame {i}: no ensemble mask, skipped");
            continue;
        };
        for c in cands {
            let on_grid;
            let c_ref = if c.dims() == ens.dims() {
                c
            } else {
                on_grid = c.resize_bilinear(ens.width(), ens.height())?;
                &on_grid
            };
            out.push(EvalTrainingPair {
                frame: frame.clone(),
                candidate: c.clone(),
                target: cosine_similarity(c_ref, ens)?,
            });
        }
    }
    Ok(out)
}

/// Anything that assigns a quality score to a candidate mask of a frame.
pub trait MaskScorer {
    fn score(&self, frame: &Frame, mask: &SoftMask) -> Result<f64>;
}

/// The first-generation heuristic; ignores the frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanNonzero;

impl MaskScorer for MeanNonzero {
    fn score(&self, _frame: &Frame, mask: &SoftMask) -> Result<f64> {
        Ok(mean_nonzero_score(mask))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorConfig {
    /// Side of the square 4-channel input.
    pub resolution: usize,
    pub widths: Vec<usize>,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig {
            resolution: 32,
            widths: vec![8, 16],
            hidden: 32,
            lr: 0.001,
            epochs: 10,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % 8 != 0 {
            return Err(Error::Config("evaluator.resolution must be a positive multiple of 8".into()));
        }
        if self.widths.len() != 2 || self.widths.contains(&0) || self.hidden == 0 {
            return Err(Error::Config(
                "evaluator needs two positive conv widths and a positive hidden size".into(),
            ));
        }
        self.fit_config().validate()
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv {
                out_channels: self.widths[0],
                stride: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Conv {
                out_channels: self.widths[1],
                stride: 2,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::Dense {
                out_shape: [self.hidden, 1, 1],
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                out_shape: [1, 1, 1],
            },
            LayerSpec::Sigmoid,
        ]
    }
}

/// Scalar mask-quality regressor over an RGB + mask stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    pub net: Network,
}

impl Evaluator {
    pub fn init(cfg: &EvaluatorConfig) -> Result<Self> {
        cfg.validate()?;
        let r = cfg.resolution;
        Ok(Evaluator {
            net: Network::init([4, r, r], &cfg.layer_specs(), cfg.seed)?,
        })
    }

    pub fn resolution(&self) -> usize {
        self.net.input_shape()[1]
    }

    fn input(&self, frame: &Frame, mask: &SoftMask) -> Result<Vec<f64>> {
        let r = self.resolution();
        let mut x = frame_planes(frame, r, r)?;
        if mask.dims() == (r, r) {
            x.extend_from_slice(mask.data());
        } else {
            x.extend(mask.resize_bilinear(r, r)?.into_data());
        }
        Ok(x)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        nn::save_weights(&self.net, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let net = nn::load_weights(path)?;
        let [c, h, w] = net.input_shape();
        if c != 4 || h != w || net.output_shape() != [1, 1, 1] {
            return Err(Error::CorruptWeights(format!(
                "{} is not an evaluator network",
                path.display()
            )));
        }
        Ok(Evaluator { net })
    }

    /// Scores many candidates of one frame in a single batch.
    pub fn score_batch(&self, frame: &Frame, masks: &[SoftMask]) -> Result<Vec<f64>> {
        if masks.is_empty() {
            return Ok(Vec::new());
        }
        let r = self.resolution();
        let mut x = Vec::with_capacity(masks.len() * 4 * r * r);
        for m in masks {
            x.extend(self.input(frame, m)?);
        }
        Ok(self
            .net
            .predict(&Tensor4::new([masks.len(), 4, r, r], x)?)?
            .into_data())
    }
}

impl MaskScorer for Evaluator {
    fn score(&self, frame: &Frame, mask: &SoftMask) -> Result<f64> {
        Ok(self.score_batch(frame, std::slice::from_ref(mask))?[0])
    }
}

/// Fits the evaluator to the pair targets by mean squared error. Returns the
/// per-epoch loss trace as well.
pub fn train_evaluator(pairs: &[EvalTrainingPair], cfg: &EvaluatorConfig) -> Result<(Evaluator, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("no evaluator training pairs"));
    }
    let mut ev = Evaluator::init(cfg)?;
    let r = cfg.resolution;
    let inputs = pairs
        .iter()
        .map(|p| ev.input(&p.frame, &p.candidate))
        .collect::<Result<Vec<_>>>()?;
    let trace = nn::fit(&mut ev.net, pairs.len(), &cfg.fit_config(), |idx, _| {
        let mut x = Vec::with_capacity(idx.len() * 4 * r * r);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(&inputs[i]);
            y.push(pairs[i].target);
        }
        Ok((
            Tensor4::new([idx.len(), 4, r, r], x)?,
            Tensor4::new([idx.len(), 1, 1, 1], y)?,
        ))
    })?;
    Ok((ev, trace))
}

/// One kept candidate: indices into the frame list and its candidate list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selected {
    pub frame: usize,
    pub candidate: usize,
    pub score: f64,
}

/// Every candidate whose score is >= `tau`, each judged on its own.
pub fn threshold_select(
    scorer: &dyn MaskScorer,
    frames: &[Frame],
    masks: &[Vec<SoftMask>],
    tau: f64,
) -> Result<Vec<Selected>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau {tau} not in [0, 1]")));
    }
    if frames.len() != masks.len() {
        return Err(Error::invalid("frames and candidate lists differ in count"));
    }
    let mut out = Vec::new();
    for (fi, (frame, cands)) in frames.iter().zip(masks).enumerate() {
        for (ci, m) in cands.iter().enumerate() {
            let score = scorer.score(frame, m)?;
            if score >= tau {
                out.push(Selected {
                    frame: fi,
                    candidate: ci,
                    score,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scored(score: f64, id: &str) -> ScoredMask {
        ScoredMask::new(SoftMask::filled(2, 2, 0.5).unwrap(), score, "t", id).unwrap()
    }

    #[test]
    fn mean_nonzero_examples() {
        assert_eq!(mean_nonzero_score(&SoftMask::filled(3, 3, 0.0).unwrap()), 0.0);
        let m = SoftMask::new(3, 1, vec![0.0, 0.4, 0.8]).unwrap();
        assert!((mean_nonzero_score(&m) - 0.6).abs() < 1e-15);
        assert!((mean_nonzero_score(&SoftMask::filled(4, 2, 0.35).unwrap()) - 0.35).abs() < 1e-15);
    }

    #[test]
    fn percentile_examples() {
        let masks: Vec<ScoredMask> = (1..=10).map(|s| scored(s as f64, &format!("f{s:02}"))).collect();
        let all = percentile_select(masks.clone(), 1.0).unwrap();
        assert_eq!(all.len(), 10);
        let top = percentile_select(masks, 0.1).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].score, 10.0);

        let ties = vec![scored(1.0, "d"), scored(1.0, "b"), scored(1.0, "a"), scored(1.0, "c")];
        let ids: Vec<_> = percentile_select(ties, 0.5)
            .unwrap()
            .into_iter()
            .map(|m| m.frame_id)
            .collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(percentile_select(Vec::new(), 0.3).unwrap().is_empty());
        assert!(percentile_select(Vec::new(), 0.0).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = SoftMask::new(2, 1, vec![1.0, 0.0]).unwrap();
        let b = SoftMask::new(2, 1, vec![1.0, 1.0]).unwrap();
        let c = SoftMask::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&a, &c).unwrap(), 0.0);
        assert!((cosine_similarity(&a, &b).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let z = SoftMask::filled(2, 1, 0.0).unwrap();
        assert_eq!(cosine_similarity(&z, &b).unwrap(), 0.0);
        assert!(cosine_similarity(&a, &SoftMask::filled(1, 2, 1.0).unwrap()).is_err());
    }

    #[test]
    fn eval_pairs_against_product_oracle() {
        let f = Frame::filled(3, 1, [0.2; 3]).unwrap();
        let c1 = SoftMask::new(3, 1, vec![0.9, 0.5, 0.1]).unwrap();
        let c2 = SoftMask::new(3, 1, vec![0.8, 0.6, 0.0]).unwrap();
        let c3 = SoftMask::new(3, 1, vec![0.0, 0.0, 0.0]).unwrap();
        let product: Vec<f64> = (0..3).map(|i| c1.data()[i] * c2.data()[i]).collect();
        let ens = SoftMask::new(3, 1, product.clone()).unwrap();
        let pairs = make_eval_pairs(
            &[f.clone(), f],
            &[vec![c1.clone(), c2.clone(), c3, ens.clone()], vec![c1.clone()]],
            &[Some(ens), None],
        )
        .unwrap();
        assert_eq!(pairs.len(), 4);
        for (p, c) in pairs.iter().zip([&c1, &c2]) {
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for i in 0..3 {
                dot += c.data()[i] * product[i];
                na += c.data()[i] * c.data()[i];
                nb += product[i] * product[i];
            }
            assert!((p.target - dot / (na * nb).sqrt()).abs() < 1e-12);
        }
        assert_eq!(pairs[2].target, 0.0);
        assert!((pairs[3].target - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let masks = vec![scored(0.9, "a"), scored(0.5, "b")];
        let kept = select_at_least(masks.clone(), 0.8);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].frame_id, "a");
        assert_eq!(select_at_least(masks.clone(), 0.0).len(), 2);
        assert!(select_at_least(masks, 1.0).is_empty());

        let f = Frame::filled(2, 2, [0.1; 3]).unwrap();
        let cands = vec![vec![
            SoftMask::filled(2, 2, 0.9).unwrap(),
            SoftMask::filled(2, 2, 0.5).unwrap(),
        ]];
        let sel = threshold_select(&MeanNonzero, std::slice::from_ref(&f), &cands, 0.8).unwrap();
        assert_eq!(sel, vec![Selected { frame: 0, candidate: 0, score: 0.9 }]);
        assert_eq!(threshold_select(&MeanNonzero, &[f], &cands, 0.0).unwrap().len(), 2);
    }

    fn toy_frame(i: usize) -> Frame {
        Frame::from_fn(32, 32, |x, y| {
            [((x + i) % 8) as f64 / 8.0, ((y + 2 * i) % 6) as f64 / 6.0, 0.3]
        })
        .unwrap()
    }

    #[test]
    fn evaluator_learns_a_constant() {
        let pairs: Vec<EvalTrainingPair> = (0..12)
            .map(|i| EvalTrainingPair {
                frame: toy_frame(i),
                candidate: SoftMask::from_fn(32, 32, |x, _| ((x + i) % 3) as f64 / 3.0).unwrap(),
                target: 0.7,
            })
            .collect();
        let cfg = EvaluatorConfig {
            epochs: 60,
            batch_size: 4,
            lr: 0.003,
            ..Default::default()
        };
        let (ev, _) = train_evaluator(&pairs, &cfg).unwrap();
        for p in &pairs {
            let s = ev.score(&p.frame, &p.candidate).unwrap();
            assert!((s - 0.7).abs() < 0.05, "{s}");
        }
        assert!(matches!(train_evaluator(&[], &cfg), Err(Error::InvalidArgument(_))));
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let mut num = 0.0;
        let (mut da, mut db) = (0.0, 0.0);
        for i in 0..a.len() {
            num += (ra[i] - ma) * (rb[i] - mb);
            da += (ra[i] - ma).powi(2);
            db += (rb[i] - mb).powi(2);
        }
        num / (da * db).sqrt()
    }

    #[test]
    fn evaluator_ranks_by_mask_mean() {
        let pairs: Vec<EvalTrainingPair> = (0..20)
            .map(|i| {
                let level = 0.05 + 0.9 * i as f64 / 19.0;
                EvalTrainingPair {
                    frame: toy_frame(i),
                    candidate: SoftMask::from_fn(32, 32, |x, y| {
                        level * (0.9 + 0.1 * ((x * 7 + y * 3 + i) % 5) as f64 / 4.0)
                    })
                    .unwrap(),
                    target: level,
                }
            })
            .collect();
        let cfg = EvaluatorConfig {
            epochs: 80,
            batch_size: 4,
            lr: 0.003,
            ..Default::default()
        };
        let (ev, trace) = train_evaluator(&pairs, &cfg).unwrap();
        assert!(trace.last().unwrap() < &trace[0]);
        let preds: Vec<f64> = pairs
            .iter()
            .map(|p| ev.score(&p.frame, &p.candidate).unwrap())
            .collect();
        let targets: Vec<f64> = pairs.iter().map(|p| p.target).collect();
        assert!(spearman(&preds, &targets) >= 0.8);
    }

    #[test]
    fn single_pair_loss_decreases() {
        let pairs = vec![EvalTrainingPair {
            frame: toy_frame(0),
            candidate: SoftMask::filled(32, 32, 0.4).unwrap(),
            target: 0.9,
        }];
        let cfg = EvaluatorConfig {
            epochs: 4,
            batch_size: 1,
            ..Default::default()
        };
        let (_, trace) = train_evaluator(&pairs, &cfg).unwrap();
        for w in trace.windows(2).take(3) {
            assert!(w[1] <= w[0] + 1e-12, "{trace:?}");
        }
    }

    #[test]
    fn evaluator_weights_round_trip() {
        let ev = Evaluator::init(&EvaluatorConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ev.fgdn");
        ev.save(&p).unwrap();
        assert_eq!(Evaluator::load(&p).unwrap(), ev);
    }

    proptest! {
        #[test]
        fn mean_nonzero_is_scale_equivariant(vals in prop::collection::vec(0.0f64..=1.0, 16), c in 0.01f64..=1.0) {
            let m = SoftMask::new(4, 4, vals).unwrap();
            let s = mean_nonzero_score(&m.scaled(c).unwrap());
            prop_assert!((s - c * mean_nonzero_score(&m)).abs() < 1e-12);
        }

        #[test]
        fn percentile_is_monotone(scores in prop::collection::vec(0.0f64..1.0, 1..40), k1 in 0.01f64..=1.0, k2 in 0.01f64..=1.0) {
            let masks: Vec<ScoredMask> = scores.iter().enumerate().map(|(i, &s)| scored(s, &format!("{i:03}"))).collect();
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            let a = percentile_select(masks.clone(), lo).unwrap();
            let b = percentile_select(masks.clone(), hi).unwrap();
            prop_assert_eq!(a.len(), (lo * masks.len() as f64).ceil() as usize);
            let ids_b: Vec<_> = b.iter().map(|m| &m.frame_id).collect();
            for m in &a {
                prop_assert!(ids_b.contains(&&m.frame_id));
            }
        }

        #[test]
        fn cosine_properties(a in prop::collection::vec(0.0f64..1.0, 9), b in prop::collection::vec(0.0f64..1.0, 9), c in 0.01f64..10.0) {
            let ma = SoftMask::new(3, 3, a.clone()).unwrap();
            let mb = SoftMask::new(3, 3, b).unwrap();
            let ab = cosine_similarity(&ma, &mb).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - cosine_similarity(&mb, &ma).unwrap()).abs() < 1e-12);
            // scale invariance without the [0,1] value range of SoftMask
            let scaled: Vec<f64> = a.iter().map(|v| v * c.min(1.0)).collect();
            let ms = SoftMask::new(3, 3, scaled).unwrap();
            prop_assert!((cosine_similarity(&ms, &mb).unwrap() - ab).abs() < 1e-9);
        }
    }
}
