//! Oracle checks shared by the oracle suite and the acceptance report. Each
//! returns the measured quantity; callers decide how to assert or print it.
#![allow(dead_code)]

use std::cell::Cell;

use fgd_core::ensemble::{argmax_first, multi_net, multiselect_net};
use fgd_core::imgcore::{BinaryMask, BoundingBox, Frame, SoftMask, VideoShot};
use fgd_core::masksel::MaskScorer;
use fgd_core::metrics::{self, EvalRecord};
use fgd_core::nn::{LayerSpec, Network, Tensor4};
use fgd_core::student::{StudentArch, StudentKind};
use fgd_core::videopca::{fit_pca, work_vector, VideoPcaConfig};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

pub fn rng(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// gradients

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// `sum(r * (net(x) - y0))`; subtracting the base output keeps rounding small.
fn probe(net: &Network, x: &Tensor4, r: &[f64], y0: &[f64]) -> f64 {
    let y = net.predict(x).unwrap();
    y.data()
        .iter()
        .zip(y0)
        .zip(r)
        .map(|((a, b), w)| w * (a - b))
        .sum()
}

/// Worst relative error between central differences and backprop, over at
/// most `per_tensor` sampled entries of every parameter tensor and of the input.
pub fn fd_max_error(net: &Network, x: &Tensor4, seed: u64, per_tensor: usize) -> f64 {
    let h = 1e-5;
    let mut g = rng(seed);
    let out_len = x.batch() * net.output_shape().iter().product::<usize>();
    let r: Vec<f64> = (0..out_len).map(|_| g.random_range(-1.0..1.0)).collect();
    let (y, cache) = net.forward(x).unwrap();
    let y0 = y.data().to_vec();
    let grads = net
        .backward(&cache, &Tensor4::new(y.dims(), r.clone()).unwrap())
        .unwrap();
    let pick = |g: &mut SplitMix64, len: usize| -> Vec<usize> {
        if len <= per_tensor {
            (0..len).collect()
        } else {
            sample(g, len, per_tensor).into_vec()
        }
    };
    let mut worst: f64 = 0.0;
    for t in 0..net.params().len() {
        for j in pick(&mut g, net.params()[t].len()) {
            let mut plus = net.clone();
            plus.params_mut()[t][j] += h;
            let mut minus = net.clone();
            minus.params_mut()[t][j] -= h;
            let numeric = (probe(&plus, x, &r, &y0) - probe(&minus, x, &r, &y0)) / (2.0 * h);
            worst = worst.max(rel_err(grads.params[t][j], numeric));
        }
    }
    for j in pick(&mut g, x.data().len()) {
        let mut xp = x.clone();
        xp.data_mut()[j] += h;
        let mut xm = x.clone();
        xm.data_mut()[j] -= h;
        let numeric = (probe(net, &xp, &r, &y0) - probe(net, &xm, &r, &y0)) / (2.0 * h);
        worst = worst.max(rel_err(grads.input.data()[j], numeric));
    }
    worst
}

/// Inputs bounded away from zero, so single layers never sit on a ReLU kink
/// or a pooling tie.
fn signed_input(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut g = rng(seed);
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = g.random_range(0.05..1.0);
            if g.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor4::new(dims, data).unwrap()
}

fn conv(out_channels: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv {
        out_channels,
        stride,
    }
}

/// Max finite-difference error of every layer kind, in isolation.
pub fn layer_gradient_errors() -> Vec<(&'static str, f64)> {
    let cases: Vec<(&str, [usize; 3], Vec<LayerSpec>)> = vec![
        ("conv", [2, 5, 6], vec![conv(3, 1)]),
        ("conv_stride2", [2, 7, 6], vec![conv(2, 2)]),
        ("relu", [2, 3, 3], vec![LayerSpec::Relu]),
        ("maxpool2", [2, 4, 6], vec![LayerSpec::MaxPool2]),
        ("upsample2", [2, 3, 2], vec![LayerSpec::Upsample2]),
        (
            "dense",
            [2, 3, 3],
            vec![LayerSpec::Dense {
                out_shape: [1, 2, 2],
            }],
        ),
        ("sigmoid", [1, 3, 4], vec![LayerSpec::Sigmoid]),
        (
            "concat_skip",
            [2, 4, 4],
            vec![conv(2, 1), conv(3, 1), LayerSpec::ConcatSkip { from: 0 }, conv(1, 1)],
        ),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, shape, specs))| {
            let mut net = Network::init(shape, &specs, 31 + i as u64).unwrap();
            // zero biases would leave part of the function untested
            for p in net.params_mut() {
                for (j, v) in p.iter_mut().enumerate() {
                    if *v == 0.0 {
                        *v = 0.01 * (j as f64 + 1.0);
                    }
                }
            }
            let x = signed_input([2, shape[0], shape[1], shape[2]], 200 + i as u64);
            (name, fd_max_error(&net, &x, 17 + i as u64, usize::MAX))
        })
        .collect()
}

/// Max finite-difference error of each default student on a 64x64 frame,
/// sampling `per_tensor` entries per parameter tensor.
pub fn student_gradient_errors(per_tensor: usize) -> Vec<(&'static str, f64)> {
    StudentKind::ALL
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let arch = StudentArch::default_for(kind);
            let mut net = arch.init(3 + i as u64).unwrap().net;
            let mut g = rng(90 + i as u64);
            for p in net.params_mut() {
                for v in p.iter_mut() {
                    if *v == 0.0 {
                        *v = g.random_range(-0.05..0.05);
                    }
                }
            }
            let [c, h, w] = arch.input_shape();
            let mut g = rng(400 + i as u64);
            let x = Tensor4::new([1, c, h, w], (0..c * h * w).map(|_| g.random::<f64>()).collect()).unwrap();
            (arch.id(), fd_max_error(&net, &x, 50 + i as u64, per_tensor))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// PCA

pub struct PcaOracle {
    /// Worst absolute reconstruction residual over the shot's frames.
    pub reconstruction: f64,
    /// Worst entry-wise difference to the brute-force eigenvectors (after sign alignment).
    pub eigenvector: f64,
    /// Worst relative eigenvalue difference.
    pub eigenvalue: f64,
}

/// Fits a `w x h` gray shot of `n` frames that lies exactly in a rank-`k`
/// affine subspace, and compares the model with an eigendecomposition of
/// the full pixel covariance.
pub fn pca_oracle(w: usize, h: usize, n: usize, k: usize, seed: u64) -> PcaOracle {
    let d = w * h;
    let mut g = rng(seed);
    let base: Vec<f64> = (0..d).map(|_| g.random_range(0.3..0.7)).collect();
    let dirs: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| g.random_range(-1.0..1.0)).collect())
        .collect();
    // distinct coefficient scales keep the eigenvalues apart
    let coeffs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..k)
                .map(|j| g.random_range(-1.0..1.0) * 0.04 / (j + 1) as f64)
                .collect()
        })
        .collect();
    let frames: Vec<Frame> = coeffs
        .iter()
        .map(|c| {
            let v: Vec<f64> = (0..d)
                .map(|p| base[p] + (0..k).map(|j| c[j] * dirs[j][p]).sum::<f64>())
                .collect();
            Frame::new(w, h, v.iter().flat_map(|&x| [x, x, x]).collect()).unwrap()
        })
        .collect();
    let cfg = VideoPcaConfig {
        k,
        work_resolution: (w, h),
        ..VideoPcaConfig::default()
    };
    let shot = VideoShot::new("oracle", frames.clone()).unwrap();
    let model = fit_pca(&shot, &cfg).unwrap();

    let xs: Vec<Vec<f64>> = frames.iter().map(|f| work_vector(f, &cfg).unwrap()).collect();
    let mut reconstruction: f64 = 0.0;
    for x in &xs {
        for r in model.residual(x) {
            reconstruction = reconstruction.max(r.abs());
        }
    }

    // brute force: scatter matrix sum_i (x_i - m)(x_i - m)^T over pixels
    let mean: Vec<f64> = (0..d).map(|p| xs.iter().map(|x| x[p]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::<f64>::from_fn(d, n, |p, i| xs[i][p] - mean[p]);
    let scatter = &centered * centered.transpose();
    let eig = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigenvector: f64 = if model.k() == k { 0.0 } else { f64::INFINITY };
    let mut eigenvalue: f64 = 0.0;
    for (j, u) in model.components.iter().enumerate() {
        let v = eig.eigenvectors.column(order[j]);
        let dot: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        let s = dot.signum();
        for (a, b) in u.iter().zip(v.iter()) {
            eigenvector = eigenvector.max((a - s * b).abs());
        }
        let lb = eig.eigenvalues[order[j]];
        eigenvalue = eigenvalue.max((model.eigenvalues[j] - lb).abs() / lb);
    }
    PcaOracle {
        reconstruction,
        eigenvector,
        eigenvalue,
    }
}

// ---------------------------------------------------------------------------
// metrics

pub const CASE_SIZE: usize = 16;

pub struct MetricCase {
    pub pred: SoftMask,
    pub pred_box: Option<BoundingBox>,
    pub gt: BinaryMask,
    pub gt_boxes: Vec<BoundingBox>,
}

fn random_box(g: &mut SplitMix64, n: usize) -> BoundingBox {
    let (a, b) = (g.random_range(0..n), g.random_range(0..n));
    let (c, d) = (g.random_range(0..n), g.random_range(0..n));
    BoundingBox::new(a.min(b), c.min(d), a.max(b), c.max(d)).unwrap()
}

/// Random 16x16 case. Masks mix empty, full, blob and noise patterns, and
/// soft values often sit exactly on sweep thresholds.
pub fn metric_case(g: &mut SplitMix64) -> MetricCase {
    let n = CASE_SIZE;
    let gt = match g.random_range(0..8) {
        0 => BinaryMask::filled(n, n, false).unwrap(),
        1 => BinaryMask::filled(n, n, true).unwrap(),
        2..=4 => {
            let b = random_box(g, n);
            BinaryMask::from_fn(n, n, |x, y| b.contains(x, y)).unwrap()
        }
        _ => {
            let d: f64 = g.random();
            let v: Vec<bool> = (0..n * n).map(|_| g.random::<f64>() < d).collect();
            BinaryMask::new(n, n, v).unwrap()
        }
    };
    let pred = match g.random_range(0..6) {
        0 => SoftMask::filled(n, n, g.random_range(0..=255) as f64 / 255.0).unwrap(),
        1 => SoftMask::new(n, n, (0..n * n).map(|_| g.random_range(0..=255) as f64 / 255.0).collect()).unwrap(),
        2 => {
            // noisy version of the ground truth
            let v = gt
                .data()
                .iter()
                .map(|&t| {
                    let base = if t { 0.8 } else { 0.2 };
                    (base + g.random_range(-0.3..0.3f64)).clamp(0.0, 1.0)
                })
                .collect();
            SoftMask::new(n, n, v).unwrap()
        }
        _ => SoftMask::new(n, n, (0..n * n).map(|_| g.random::<f64>()).collect()).unwrap(),
    };
    let pred_box = (g.random_range(0..5) != 0).then(|| random_box(g, n));
    let mut gt_boxes: Vec<BoundingBox> = (0..g.random_range(0..3)).map(|_| random_box(g, n)).collect();
    if gt_boxes.is_empty() && gt.count() == 0 {
        gt_boxes.push(random_box(g, n));
    }
    MetricCase {
        pred,
        pred_box,
        gt,
        gt_boxes,
    }
}

impl MetricCase {
    pub fn record(&self, class: &str) -> EvalRecord {
        EvalRecord::new(
            "case",
            class,
            self.pred_box,
            Some(self.pred.clone()),
            self.gt_boxes.clone(),
            Some(self.gt.clone()),
        )
        .unwrap()
    }
}

fn in_box(b: &BoundingBox, x: usize, y: usize) -> bool {
    (b.x_min..=b.x_max).contains(&x) && (b.y_min..=b.y_max).contains(&y)
}

/// Box IoU by counting pixels of a grid large enough to hold both boxes.
pub fn naive_box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = a.x_max.max(b.x_max) + 1;
    let h = a.y_max.max(b.y_max) + 1;
    let (mut inter, mut uni) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let (p, q) = (in_box(a, x, y), in_box(b, x, y));
            inter += usize::from(p && q);
            uni += usize::from(p || q);
        }
    }
    inter as f64 / uni as f64
}

/// The ground-truth mask hull when a case has no ground-truth boxes.
fn naive_hull(m: &BinaryMask) -> Option<BoundingBox> {
    let (w, h) = m.dims();
    let mut hull: Option<(usize, usize, usize, usize)> = None;
    for y in 0..h {
        for x in 0..w {
            if m.data()[y * w + x] {
                hull = Some(match hull {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                });
            }
        }
    }
    hull.map(|(a, b, c, d)| BoundingBox::new(a, b, c, d).unwrap())
}

pub fn naive_correct(c: &MetricCase) -> bool {
    let refs: Vec<BoundingBox> = if c.gt_boxes.is_empty() {
        naive_hull(&c.gt).into_iter().collect()
    } else {
        c.gt_boxes.clone()
    };
    match &c.pred_box {
        None => false,
        Some(p) => refs.iter().any(|g| naive_box_iou(p, g) >= 0.5),
    }
}

fn naive_f(tp: usize, fp: usize, fn_: usize, beta2: f64) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if beta2 * p + r == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * p * r / (beta2 * p + r)
    }
}

pub fn naive_f_beta(pred: &SoftMask, gt: &BinaryMask, beta2: f64) -> f64 {
    let mut best: f64 = 0.0;
    for k in 0..=255 {
        let t = k as f64 / 255.0;
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for i in 0..pred.data().len() {
            let p = pred.data()[i] >= t;
            let g = gt.data()[i];
            tp += usize::from(p && g);
            fp += usize::from(p && !g);
            fn_ += usize::from(!p && g);
        }
        best = best.max(naive_f(tp, fp, fn_, beta2));
    }
    best
}

/// (P, J, MAE, IoU) with the prediction binarized at `t` for P, J and IoU.
pub fn naive_mask_metrics(pred: &SoftMask, gt: &BinaryMask, t: f64) -> (f64, f64, f64, f64) {
    let n = pred.data().len();
    let (mut agree, mut inter, mut uni) = (0usize, 0usize, 0usize);
    let mut abs = 0.0;
    for i in 0..n {
        let p = pred.data()[i] >= t;
        let g = gt.data()[i];
        agree += usize::from(p == g);
        inter += usize::from(p && g);
        uni += usize::from(p || g);
        abs += (pred.data()[i] - if g { 1.0 } else { 0.0 }).abs();
    }
    let j = if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
    (agree as f64 / n as f64, j, abs / n as f64, j)
}

/// Worst absolute difference between library metrics and the naive loops
/// over `cases` random cases, per-case and aggregated through a report.
pub fn metric_oracle_error(cases: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let cs: Vec<MetricCase> = (0..cases).map(|_| metric_case(&mut g)).collect();
    let mut worst: f64 = 0.0;
    let mut note = |a: f64, b: f64| worst = worst.max((a - b).abs());
    let t = 0.5;
    for c in &cs {
        let rec = c.record("x");
        let expect = if naive_correct(c) { 100.0 } else { 0.0 };
        note(metrics::corloc(std::slice::from_ref(&rec)).unwrap(), expect);
        if let Some(p) = &c.pred_box {
            for b in &c.gt_boxes {
                note(metrics::box_iou(p, b), naive_box_iou(p, b));
                note(metrics::box_iou(b, p), naive_box_iou(p, b));
            }
        }
        note(
            metrics::f_beta(&c.pred, &c.gt, metrics::DEFAULT_BETA2).unwrap(),
            naive_f_beta(&c.pred, &c.gt, metrics::DEFAULT_BETA2),
        );
        let bin = fgd_core::postproc::binarize(&c.pred, t);
        let (np, nj, nmae, niou) = naive_mask_metrics(&c.pred, &c.gt, t);
        let (p, j) = metrics::pj(&bin, &c.gt).unwrap();
        note(p, np);
        note(j, nj);
        note(metrics::mae(&c.pred, &c.gt).unwrap(), nmae);
        note(metrics::mean_iou(&bin, &c.gt).unwrap(), niou);
        note(metrics::mean_iou(&c.gt, &bin).unwrap(), niou);
    }

    // aggregate report over three classes against per-class naive means
    let classes = ["a", "b", "c"];
    let recs: Vec<EvalRecord> = cs.iter().enumerate().map(|(i, c)| c.record(classes[i % 3])).collect();
    let report = metrics::evaluate_records(&recs, t).unwrap();
    let mut avg = [0.0f64; 5];
    for (k, class) in classes.iter().enumerate() {
        let mine: Vec<&MetricCase> = cs.iter().skip(k).step_by(3).collect();
        let m = mine.len() as f64;
        let corloc = 100.0 * mine.iter().filter(|c| naive_correct(c)).count() as f64 / m;
        let fb = mine.iter().map(|c| naive_f_beta(&c.pred, &c.gt, 0.3)).sum::<f64>() / m;
        let mm: Vec<_> = mine.iter().map(|c| naive_mask_metrics(&c.pred, &c.gt, t)).collect();
        let p = mm.iter().map(|v| v.0).sum::<f64>() / m;
        let j = mm.iter().map(|v| v.1).sum::<f64>() / m;
        let mae = mm.iter().map(|v| v.2).sum::<f64>() / m;
        let row = report.per_class.iter().find(|r| r.class == *class).unwrap();
        note(row.corloc, corloc);
        note(row.f_beta.unwrap(), fb);
        note(row.precision.unwrap(), p);
        note(row.jaccard.unwrap(), j);
        note(row.mae.unwrap(), mae);
        note(row.mean_iou.unwrap(), j);
        for (s, v) in avg.iter_mut().zip([corloc, fb, p, j, mae]) {
            *s += v / 3.0;
        }
    }
    let a = &report.average;
    note(a.corloc, avg[0]);
    note(a.f_beta.unwrap(), avg[1]);
    note(a.precision.unwrap(), avg[2]);
    note(a.jaccard.unwrap(), avg[3]);
    note(a.mae.unwrap(), avg[4]);
    worst
}

/// The worked examples of the metric definitions; returns the failures.
pub fn metric_fixtures() -> Vec<String> {
    let mut bad = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-12 {
            bad.push(format!("{name}: {got} != {want}"));
        }
    };
    let bb = |a, b, c, d| BoundingBox::new(a, b, c, d).unwrap();
    check("iou identical", metrics::box_iou(&bb(2, 2, 5, 7), &bb(2, 2, 5, 7)), 1.0);
    check("iou disjoint", metrics::box_iou(&bb(0, 0, 1, 1), &bb(5, 5, 6, 6)), 0.0);
    check("iou half", metrics::box_iou(&bb(0, 0, 9, 9), &bb(0, 0, 9, 19)), 0.5);
    let boundary = EvalRecord::new("f", "c", Some(bb(0, 0, 9, 9)), None, vec![bb(0, 0, 9, 19)], None).unwrap();
    let missing = EvalRecord::new("g", "c", None, None, vec![bb(0, 0, 9, 19)], None).unwrap();
    check("corloc boundary", metrics::corloc(std::slice::from_ref(&boundary)).unwrap(), 100.0);
    check("corloc missing", metrics::corloc(std::slice::from_ref(&missing)).unwrap(), 0.0);
    check("corloc mixed", metrics::corloc(&[boundary, missing]).unwrap(), 50.0);

    // prediction covers half the ground truth with no false positives
    let gt = BinaryMask::from_fn(4, 4, |_, y| y < 2).unwrap();
    let half = SoftMask::from_fn(4, 4, |_, y| if y == 0 { 1.0 } else { 0.0 }).unwrap();
    check("f_beta half", metrics::f_beta(&half, &gt, 0.3).unwrap(), 0.8125);
    check("f_beta equal", metrics::f_beta(&gt.to_soft(), &gt, 0.3).unwrap(), 1.0);
    let empty = BinaryMask::filled(4, 4, false).unwrap();
    check("f_beta empty", metrics::f_beta_at(&empty.to_soft(), &empty, 0.3, 0.5).unwrap(), 1.0);

    let g4 = BinaryMask::new(4, 1, vec![true, true, false, false]).unwrap();
    let p4 = BinaryMask::new(4, 1, vec![false, true, true, false]).unwrap();
    let (p, j) = metrics::pj(&p4, &g4).unwrap();
    check("pj P", p, 0.5);
    check("pj J", j, 1.0 / 3.0);
    let (p, j) = metrics::pj(&g4.complement(), &g4).unwrap();
    check("pj complement P", p, 0.0);
    check("pj complement J", j, 0.0);

    let g2 = BinaryMask::new(2, 1, vec![false, true]).unwrap();
    check("mae", metrics::mae(&SoftMask::new(2, 1, vec![0.2, 0.9]).unwrap(), &g2).unwrap(), 0.15);
    check("mae half", metrics::mae(&SoftMask::filled(2, 1, 0.5).unwrap(), &g2).unwrap(), 0.5);
    let g10 = BinaryMask::from_fn(10, 1, |_, _| true).unwrap();
    let p5 = BinaryMask::from_fn(10, 1, |x, _| x < 5).unwrap();
    check("iou inside", metrics::mean_iou(&p5, &g10).unwrap(), 0.5);
    bad
}

// ---------------------------------------------------------------------------
// ensembles

/// Hands out fixed scores in call order.
pub struct SequenceScorer {
    pub scores: Vec<f64>,
    pub next: Cell<usize>,
}

impl MaskScorer for SequenceScorer {
    fn score(&self, _frame: &Frame, _mask: &SoftMask) -> fgd_core::Result<f64> {
        let i = self.next.get();
        self.next.set(i + 1);
        Ok(self.scores[i])
    }
}

/// Checks the ensemble laws on one tuple of masks; `None` when they hold.
/// `perm` is a permutation of the mask indices, `scores` one score per mask.
pub fn ensemble_laws(masks: &[SoftMask], perm: &[usize], scores: &[f64]) -> Option<String> {
    let fused = multi_net(masks).ok()?;
    for (i, v) in fused.data().iter().enumerate() {
        let min = masks.iter().map(|m| m.data()[i]).fold(f64::INFINITY, f64::min);
        if *v > min {
            return Some(format!("pixel {i}: product {v} above min {min}"));
        }
        if !(0.0..=1.0).contains(v) {
            return Some(format!("pixel {i}: {v} outside [0, 1]"));
        }
    }
    let permuted: Vec<SoftMask> = perm.iter().map(|&j| masks[j].clone()).collect();
    let again = multi_net(&permuted).ok()?;
    for (a, b) in fused.data().iter().zip(again.data()) {
        if (a - b).abs() > 1e-14 {
            return Some(format!("permutation changed {a} to {b}"));
        }
    }

    let (w, h) = masks[0].dims();
    let frame = Frame::filled(w, h, [0.5; 3]).unwrap();
    let scorer = SequenceScorer {
        scores: scores.to_vec(),
        next: Cell::new(0),
    };
    let (idx, chosen) = multiselect_net(&frame, masks, &scorer).ok()?;
    if !masks.contains(&chosen) || masks[idx] != chosen {
        return Some("multiselect output is not a candidate".into());
    }
    if Some(idx) != argmax_first(scores) {
        return Some(format!("picked {idx}, scores {scores:?}"));
    }
    None
}
