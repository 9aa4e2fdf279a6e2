//! Evaluation metrics: CorLoc, max F-beta, P-J, MAE and mean IoU.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, BoundingBox, SoftMask};
use crate::postproc::binarize;

pub const DEFAULT_BETA2: f64 = 0.3;
/// Thresholds `k / 255` for `k = 0..=255`.
pub const SWEEP_STEPS: usize = 256;

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("mask sizes differ: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Intersection over union with inclusive pixel areas.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    match a.intersection(b) {
        None => 0.0,
        Some(i) => {
            let inter = i.area() as f64;
            inter / (a.area() as f64 + b.area() as f64 - inter)
        }
    }
}

/// One evaluated frame.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub frame_id: String,
    pub class: String,
    pub pred_box: Option<BoundingBox>,
    pub pred_mask: Option<SoftMask>,
    pub gt_boxes: Vec<BoundingBox>,
    pub gt_mask: Option<BinaryMask>,
}

impl EvalRecord {
    pub fn new(
        frame_id: impl Into<String>,
        class: impl Into<String>,
        pred_box: Option<BoundingBox>,
        pred_mask: Option<SoftMask>,
        gt_boxes: Vec<BoundingBox>,
        gt_mask: Option<BinaryMask>,
    ) -> Result<Self> {
        let frame_id = frame_id.into();
        if gt_boxes.is_empty() && gt_mask.is_none() {
            return Err(Error::invalid(format!("{frame_id}: no ground truth")));
        }
        if let (Some(p), Some(g)) = (&pred_mask, &gt_mask) {
            check_dims(p.dims(), g.dims())?;
        }
        Ok(EvalRecord {
            frame_id,
            class: class.into(),
            pred_box,
            pred_mask,
            gt_boxes,
            gt_mask,
        })
    }

    /// Ground-truth boxes, falling back to the hull of the ground-truth mask.
    pub fn reference_boxes(&self) -> Vec<BoundingBox> {
        if !self.gt_boxes.is_empty() {
            return self.gt_boxes.clone();
        }
        self.gt_mask
            .as_ref()
            .and_then(BinaryMask::bounding_box)
            .into_iter()
            .collect()
    }

    /// Best IoU of the predicted box against any ground-truth box (0 without a prediction).
    pub fn best_iou(&self) -> f64 {
        match &self.pred_box {
            None => 0.0,
            Some(p) => self
                .reference_boxes()
                .iter()
                .map(|g| box_iou(p, g))
                .fold(0.0, f64::max),
        }
    }
}

/// Percentage of records whose predicted box reaches IoU >= 0.5 with some ground-truth box.
pub fn corloc(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("CorLoc over zero records"));
    }
    let hits = records.iter().filter(|r| r.best_iou() >= 0.5).count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

fn f_from_counts(tp: usize, fp: usize, fn_: usize, beta2: f64) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let den = beta2 * p + r;
    if den > 0.0 {
        (1.0 + beta2) * p * r / den
    } else {
        0.0
    }
}

/// F-beta after binarizing `pred` at `t`.
pub fn f_beta_at(pred: &SoftMask, gt: &BinaryMask, beta2: f64, t: f64) -> Result<f64> {
    check_dims(pred.dims(), gt.dims())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p >= t, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(f_from_counts(tp, fp, fn_, beta2))
}

/// Maximum F-beta over the 256 thresholds `0, 1/255, ..., 1`.
pub fn f_beta(pred: &SoftMask, gt: &BinaryMask, beta2: f64) -> Result<f64> {
    check_dims(pred.dims(), gt.dims())?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if g {
            pos.push(p);
        } else {
            neg.push(p);
        }
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut best = 0.0f64;
    for k in 0..SWEEP_STEPS {
        let t = k as f64 / 255.0;
        let tp = pos.len() - pos.partition_point(|&v| v < t);
        let fp = neg.len() - neg.partition_point(|&v| v < t);
        best = best.max(f_from_counts(tp, fp, pos.len() - tp, beta2));
    }
    Ok(best)
}

/// `(P, J)`: pixel accuracy and Jaccard index; J is 1 when both masks are empty.
pub fn pj(pred: &BinaryMask, gt: &BinaryMask) -> Result<(f64, f64)> {
    check_dims(pred.dims(), gt.dims())?;
    let n = pred.data().len();
    let (mut agree, mut inter, mut uni) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        agree += usize::from(p == g);
        inter += usize::from(p && g);
        uni += usize::from(p || g);
    }
    let j = if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
    Ok((agree as f64 / n as f64, j))
}

pub fn mae(pred: &SoftMask, gt: &BinaryMask) -> Result<f64> {
    check_dims(pred.dims(), gt.dims())?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(total / pred.data().len() as f64)
}

/// Foreground IoU of two binary masks (1 when both are empty).
pub fn mean_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pj(pred, gt).map(|(_, j)| j)
}

/// Aggregated metrics for one class or the class average.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub class: String,
    pub frames: usize,
    pub corloc: f64,
    /// Mask metrics are absent when no record of the class has both masks.
    pub f_beta: Option<f64>,
    pub precision: Option<f64>,
    pub jaccard: Option<f64>,
    pub mae: Option<f64>,
    pub mean_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_class: Vec<MetricRow>,
    /// Unweighted mean of the per-class rows.
    pub average: MetricRow,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    mean(&vals)
}

/// Per-class means, then the average over classes. Masks are binarized at
/// `mask_threshold` for P, J and IoU.
pub fn evaluate_records(records: &[EvalRecord], mask_threshold: f64) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::invalid("no records to evaluate"));
    }
    let mut by_class: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(&r.class).or_default().push(r);
    }
    let mut per_class = Vec::new();
    for (class, recs) in by_class {
        let owned: Vec<EvalRecord> = recs.iter().map(|r| (*r).clone()).collect();
        let mut fb = Vec::new();
        let mut p = Vec::new();
        let mut j = Vec::new();
        let mut ma = Vec::new();
        for r in &recs {
            if let (Some(pm), Some(gm)) = (&r.pred_mask, &r.gt_mask) {
                fb.push(f_beta(pm, gm, DEFAULT_BETA2)?);
                let (pp, jj) = pj(&binarize(pm, mask_threshold), gm)?;
                p.push(pp);
                j.push(jj);
                ma.push(mae(pm, gm)?);
            }
        }
        per_class.push(MetricRow {
            class: class.to_string(),
            frames: recs.len(),
            corloc: corloc(&owned)?,
            f_beta: mean(&fb),
            precision: mean(&p),
            jaccard: mean(&j),
            mae: mean(&ma),
            mean_iou: mean(&j),
        });
    }
    let average = MetricRow {
        class: "average".into(),
        frames: records.len(),
        corloc: per_class.iter().map(|r| r.corloc).sum::<f64>() / per_class.len() as f64,
        f_beta: mean_opt(per_class.iter().map(|r| r.f_beta)),
        precision: mean_opt(per_class.iter().map(|r| r.precision)),
        jaccard: mean_opt(per_class.iter().map(|r| r.jaccard)),
        mae: mean_opt(per_class.iter().map(|r| r.mae)),
        mean_iou: mean_opt(per_class.iter().map(|r| r.mean_iou)),
    };
    Ok(MetricReport { per_class, average })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(a: usize, b: usize, c: usize, d: usize) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    fn rec(pred: Option<BoundingBox>, gt: BoundingBox) -> EvalRecord {
        EvalRecord::new("f", "c", pred, None, vec![gt], None).unwrap()
    }

    #[test]
    fn box_iou_examples() {
        assert_eq!(box_iou(&bb(1, 2, 5, 7), &bb(1, 2, 5, 7)), 1.0);
        assert_eq!(box_iou(&bb(0, 0, 3, 3), &bb(4, 4, 6, 6)), 0.0);
        assert_eq!(box_iou(&bb(0, 0, 9, 9), &bb(0, 0, 9, 19)), 0.5);
        let (a, b) = (bb(0, 0, 4, 6), bb(2, 3, 8, 9));
        assert_eq!(box_iou(&a, &b), box_iou(&b, &a));
    }

    #[test]
    fn corloc_examples() {
        let gt = bb(0, 0, 9, 9);
        assert_eq!(corloc(&[rec(Some(gt), gt), rec(Some(gt), gt)]).unwrap(), 100.0);
        assert_eq!(corloc(&[rec(None, gt), rec(None, gt)]).unwrap(), 0.0);
        // IoU exactly 0.5 counts
        assert_eq!(corloc(&[rec(Some(bb(0, 0, 9, 19)), gt)]).unwrap(), 100.0);
        assert_eq!(
            corloc(&[rec(Some(gt), gt), rec(Some(bb(20, 20, 25, 25)), gt)]).unwrap(),
            50.0
        );
        assert!(corloc(&[]).is_err());
        // best of several ground-truth boxes
        let r = EvalRecord::new("f", "c", Some(gt), None, vec![bb(30, 30, 31, 31), gt], None).unwrap();
        assert_eq!(r.best_iou(), 1.0);
    }

    #[test]
    fn f_beta_examples() {
        let gt = BinaryMask::new(4, 1, vec![true, true, false, false]).unwrap();
        let exact = gt.to_soft();
        for k in [0.1, 0.5, 1.0] {
            assert_eq!(f_beta_at(&exact, &gt, 0.3, k).unwrap(), 1.0);
        }
        assert_eq!(f_beta(&exact, &gt, 0.3).unwrap(), 1.0);
        let half = SoftMask::new(4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((f_beta_at(&half, &gt, 0.3, 0.5).unwrap() - 0.8125).abs() < 1e-15);
        assert!((f_beta(&half, &gt, 0.3).unwrap() - 0.8125).abs() < 1e-15);
        let empty = BinaryMask::filled(4, 1, false).unwrap();
        let zero = SoftMask::filled(4, 1, 0.0).unwrap();
        assert_eq!(f_beta_at(&zero, &empty, 0.3, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn f_beta_weighs_precision_over_recall() {
        // P = 0.9, R = 0.6 vs P = 0.6, R = 0.9
        let f = |p: f64, r: f64| 1.3 * p * r / (0.3 * p + r);
        assert!(f(0.9, 0.6) > f(0.6, 0.9));
        // counts: tp 9, fp 1, fn 6 -> P 0.9, R 0.6
        assert!((f_from_counts(9, 1, 6, 0.3) - f(0.9, 0.6)).abs() < 1e-15);
    }

    #[test]
    fn pj_examples() {
        let gt = BinaryMask::new(4, 1, vec![true, true, false, false]).unwrap();
        assert_eq!(pj(&gt, &gt).unwrap(), (1.0, 1.0));
        assert_eq!(pj(&gt.complement(), &gt).unwrap(), (0.0, 0.0));
        let pred = BinaryMask::new(4, 1, vec![false, true, true, false]).unwrap();
        let (p, j) = pj(&pred, &gt).unwrap();
        assert_eq!(p, 0.5);
        assert!((j - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mae_and_iou_examples() {
        let gt = BinaryMask::new(2, 1, vec![false, true]).unwrap();
        assert_eq!(mae(&gt.to_soft(), &gt).unwrap(), 0.0);
        assert_eq!(mae(&SoftMask::filled(2, 1, 0.5).unwrap(), &gt).unwrap(), 0.5);
        let pred = SoftMask::new(2, 1, vec![0.2, 0.9]).unwrap();
        assert!((mae(&pred, &gt).unwrap() - 0.15).abs() < 1e-15);

        let g = BinaryMask::from_fn(10, 1, |_, _| true).unwrap();
        let p = BinaryMask::from_fn(10, 1, |x, _| x < 5).unwrap();
        assert_eq!(mean_iou(&p, &g).unwrap(), 0.5);
        assert_eq!(mean_iou(&g, &g).unwrap(), 1.0);
        assert_eq!(mean_iou(&p, &p.complement()).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let a = BinaryMask::filled(2, 2, true).unwrap();
        let b = BinaryMask::filled(2, 3, true).unwrap();
        assert!(pj(&a, &b).is_err());
        assert!(mae(&a.to_soft(), &b).is_err());
        assert!(f_beta(&a.to_soft(), &b, 0.3).is_err());
    }

    #[test]
    fn report_averages_classes() {
        let gt = bb(0, 0, 9, 9);
        let recs = vec![
            EvalRecord::new("a/1", "a", Some(gt), None, vec![gt], None).unwrap(),
            EvalRecord::new("a/2", "a", None, None, vec![gt], None).unwrap(),
            EvalRecord::new("b/1", "b", Some(gt), None, vec![gt], None).unwrap(),
        ];
        let rep = evaluate_records(&recs, 0.5).unwrap();
        assert_eq!(rep.per_class.len(), 2);
        assert_eq!(rep.per_class[0].corloc, 50.0);
        assert_eq!(rep.per_class[1].corloc, 100.0);
        assert_eq!(rep.average.corloc, 75.0);
        assert_eq!(rep.average.f_beta, None);
    }
}
