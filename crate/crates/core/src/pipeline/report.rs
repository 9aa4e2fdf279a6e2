//! Ground-truth loading and evaluation reports. This is the only part of the
//! pipeline that opens ground-truth files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::imgcore::{load_mask_png, BinaryMask, BoundingBox, SoftMask};
use crate::masksel::{keep_count, rank_cmp};
use crate::metrics::{evaluate_records, mean_iou, EvalRecord, MetricReport, MetricRow};
use crate::pipeline::stages::{collect_pngs, frame_id_of, to_frame_size};
use crate::postproc::{binarize, primary_box, PostprocConfig};

/// Class used when a frame has a ground-truth mask but no box row.
pub const UNLABELED_CLASS: &str = "object";

#[derive(Debug, Clone, PartialEq)]
pub struct GtEntry {
    pub class: String,
    pub boxes: Vec<BoundingBox>,
    pub mask_path: Option<PathBuf>,
}

/// Ground truth of one corpus root, keyed by frame id (`<shot>/<stem>`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub entries: BTreeMap<String, GtEntry>,
}

#[derive(Deserialize)]
struct BoxCsvRow {
    frame_id: String,
    class: String,
    x_min: usize,
    y_min: usize,
    x_max: usize,
    y_max: usize,
}

impl GroundTruth {
    /// Reads `boxes.csv` and the mask PNGs of a ground-truth directory (or of
    /// `<root>/gt` when given a corpus root). `None` when there is none.
    pub fn load(dir: &Path) -> Result<Option<GroundTruth>> {
        let dir = if dir.join("gt").is_dir() {
            dir.join("gt")
        } else {
            dir.to_path_buf()
        };
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut entries: BTreeMap<String, GtEntry> = BTreeMap::new();
        let csv_path = dir.join("boxes.csv");
        if csv_path.is_file() {
            let csv_err = |source| Error::Csv {
                path: csv_path.clone(),
                source,
            };
            let mut r = csv::Reader::from_path(&csv_path).map_err(csv_err)?;
            for rec in r.deserialize() {
                let row: BoxCsvRow = rec.map_err(csv_err)?;
                let b = BoundingBox::new(row.x_min, row.y_min, row.x_max, row.y_max)?;
                let e = entries.entry(row.frame_id).or_insert_with(|| GtEntry {
                    class: row.class.clone(),
                    boxes: Vec::new(),
                    mask_path: None,
                });
                e.boxes.push(b);
            }
        }
        for (path, rel) in collect_pngs(&dir)? {
            let id = frame_id_of(&rel);
            entries
                .entry(id)
                .or_insert_with(|| GtEntry {
                    class: UNLABELED_CLASS.into(),
                    boxes: Vec::new(),
                    mask_path: None,
                })
                .mask_path = Some(path);
        }
        if entries.is_empty() {
            return Ok(None);
        }
        Ok(Some(GroundTruth { entries }))
    }

    pub fn get(&self, frame_id: &str) -> Option<&GtEntry> {
        self.entries.get(frame_id)
    }

    pub fn mask(&self, entry: &GtEntry) -> Result<Option<BinaryMask>> {
        entry
            .mask_path
            .as_ref()
            .map(|p| Ok(binarize(&load_mask_png(p)?, 0.5)))
            .transpose()
    }
}

/// Builds records for predicted masks (any size; resized to the ground-truth
/// mask, or kept as is when there is no mask). Frames without ground truth
/// are skipped.
pub fn build_records(
    preds: &[(String, SoftMask)],
    gt: &GroundTruth,
    cfg: &PostprocConfig,
) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (id, m) in preds {
        let Some(e) = gt.get(id) else { continue };
        let gt_mask = gt.mask(e)?;
        let m = match &gt_mask {
            Some(g) => to_frame_size(m, g.dims())?,
            None => m.clone(),
        };
        let b = primary_box(&m, m.width(), m.height(), cfg)?;
        out.push(EvalRecord::new(
            id.clone(),
            e.class.clone(),
            b,
            Some(m),
            e.boxes.clone(),
            gt_mask,
        )?);
    }
    Ok(out)
}

/// Metrics of every mask below `pred_dir` against the ground truth in `gt_dir`.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, cfg: &PostprocConfig) -> Result<MetricReport> {
    let gt = GroundTruth::load(gt_dir)?
        .ok_or_else(|| Error::invalid(format!("no ground truth in {}", gt_dir.display())))?;
    let preds = collect_pngs(pred_dir)?
        .into_iter()
        .map(|(p, rel)| Ok((frame_id_of(&rel), load_mask_png(&p)?)))
        .collect::<Result<Vec<_>>>()?;
    let records = build_records(&preds, &gt, cfg)?;
    if records.is_empty() {
        return Err(Error::invalid(format!(
            "no mask in {} matches a ground-truth frame",
            pred_dir.display()
        )));
    }
    evaluate_records(&records, cfg.threshold)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub const METRIC_HEADER: &str = "generation,model,class,frames,corloc,f_beta,precision,jaccard,mae,mean_iou";

fn metric_line(out: &mut String, generation: usize, model: &str, r: &MetricRow) {
    let _ = writeln!(
        out,
        "{generation},{model},{},{},{:.6},{},{},{},{},{}",
        r.class,
        r.frames,
        r.corloc,
        fmt_opt(r.f_beta),
        fmt_opt(r.precision),
        fmt_opt(r.jaccard),
        fmt_opt(r.mae),
        fmt_opt(r.mean_iou)
    );
}

/// CSV rows for one model: per-class rows then the average; a single `NA`
/// row when there was no ground truth.
pub fn metric_lines(out: &mut String, generation: usize, model: &str, report: Option<&MetricReport>) {
    match report {
        Some(r) => {
            for row in &r.per_class {
                metric_line(out, generation, model, row);
            }
            metric_line(out, generation, model, &r.average);
        }
        None => {
            let _ = writeln!(out, "{generation},{model},average,0,NA,NA,NA,NA,NA,NA");
        }
    }
}

/// One scored candidate with its ground-truth IoU.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub key: String,
    pub producer: String,
    pub mean_nonzero: f64,
    pub evaluator: f64,
    pub iou: f64,
}

/// Mean IoU of the top `keep` share by one scorer, and of the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub scorer: String,
    pub keep: f64,
    pub selected: usize,
    pub selected_iou: f64,
    pub rest_iou: Option<f64>,
    pub all_iou: f64,
}

pub const SELECTION_KEEPS: [f64; 10] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0];

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Selection purity curves for the mean-nonzero and evaluator scorers.
pub fn selection_rows(cands: &[ScoredCandidate]) -> Vec<SelectionRow> {
    if cands.is_empty() {
        return Vec::new();
    }
    let all_iou = mean(cands.iter().map(|c| c.iou)).unwrap_or(0.0);
    let mut rows = Vec::new();
    for (name, score) in [
        ("mean_nonzero", (|c: &ScoredCandidate| c.mean_nonzero) as fn(&ScoredCandidate) -> f64),
        ("evaluator", |c: &ScoredCandidate| c.evaluator),
    ] {
        let mut order: Vec<&ScoredCandidate> = cands.iter().collect();
        order.sort_by(|a, b| rank_cmp((score(a), &a.key, &a.producer), (score(b), &b.key, &b.producer)));
        for keep in SELECTION_KEEPS {
            let n = keep_count(order.len(), keep);
            rows.push(SelectionRow {
                scorer: name.into(),
                keep,
                selected: n,
                selected_iou: mean(order[..n].iter().map(|c| c.iou)).unwrap_or(0.0),
                rest_iou: mean(order[n..].iter().map(|c| c.iou)),
                all_iou,
            });
        }
    }
    rows
}

/// IoU of a candidate mask (binarized at `threshold`) with the ground-truth mask.
pub fn candidate_iou(m: &SoftMask, gt: &BinaryMask, threshold: f64) -> Result<f64> {
    let m = to_frame_size(m, gt.dims())?;
    mean_iou(&binarize(&m, threshold), gt)
}

pub fn selection_csv(generation: usize, rows: &[SelectionRow]) -> String {
    let mut s = String::from("generation,scorer,keep,selected,selected_mean_iou,rest_mean_iou,all_mean_iou\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{generation},{},{:.2},{},{:.6},{},{:.6}",
            r.scorer,
            r.keep,
            r.selected,
            r.selected_iou,
            fmt_opt(r.rest_iou),
            r.all_iou
        );
    }
    s
}

/// gnuplot data: `keep mean_nonzero_iou evaluator_iou`.
pub fn selection_dat(rows: &[SelectionRow]) -> String {
    let mut s = String::from("# keep mean_nonzero_iou evaluator_iou\n");
    for keep in SELECTION_KEEPS {
        let find = |name: &str| {
            rows.iter()
                .find(|r| r.scorer == name && r.keep == keep)
                .map(|r| r.selected_iou)
        };
        if let (Some(a), Some(b)) = (find("mean_nonzero"), find("evaluator")) {
            let _ = writeln!(s, "{keep:.2} {a:.6} {b:.6}");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(key: &str, mn: f64, ev: f64, iou: f64) -> ScoredCandidate {
        ScoredCandidate {
            key: key.into(),
            producer: "p".into(),
            mean_nonzero: mn,
            evaluator: ev,
            iou,
        }
    }

    #[test]
    fn selection_rows_rank_by_each_scorer() {
        let cands: Vec<_> = (0..10)
            .map(|i| cand(&format!("{i}"), i as f64, (9 - i) as f64, i as f64 / 10.0))
            .collect();
        let rows = selection_rows(&cands);
        let mn = rows.iter().find(|r| r.scorer == "mean_nonzero" && r.keep == 0.1).unwrap();
        assert_eq!(mn.selected, 1);
        assert!((mn.selected_iou - 0.9).abs() < 1e-12);
        assert!((mn.rest_iou.unwrap() - 0.4).abs() < 1e-12);
        let ev = rows.iter().find(|r| r.scorer == "evaluator" && r.keep == 0.1).unwrap();
        assert_eq!(ev.selected_iou, 0.0);
        let all = rows.iter().find(|r| r.scorer == "evaluator" && r.keep == 1.0).unwrap();
        assert_eq!(all.rest_iou, None);
        assert!((all.all_iou - 0.45).abs() < 1e-12);
    }

    #[test]
    fn missing_gt_dir_is_none() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(GroundTruth::load(&dir.path().join("nope")).unwrap(), None);
    }
}
