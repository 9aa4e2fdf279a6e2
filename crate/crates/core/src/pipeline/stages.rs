//! Stage functions shared by the generation runner and the command line.
//! None of them reads ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use crate::ensemble::{multi_net, multiselect_net, StudentPool};
use crate::error::{Error, Result};
use crate::imgcore::{load_frame_png, load_mask_png, load_shot_dir, save_mask_png, Frame, SoftMask, VideoShot};
use crate::masksel::{keep_count, mean_nonzero_score, rank_cmp, Evaluator, SelectionPolicy};
use crate::pipeline::dataset::ShotRef;
use crate::pipeline::manifest::ManifestRow;
use crate::postproc::{primary_box, PostprocConfig};
use crate::student::{train_student, StudentArch, StudentNet, TrainConfig};
use crate::videopca::{discover, VideoPcaConfig};

pub const VIDEOPCA: &str = "videopca";
pub const MULTI_NET: &str = "multi_net";
pub const MULTISELECT: &str = "multiselect";

pub fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Upsamples (or downsamples) a mask to frame size.
pub fn to_frame_size(m: &SoftMask, frame: (usize, usize)) -> Result<SoftMask> {
    if m.dims() == frame {
        Ok(m.clone())
    } else {
        m.resize_bilinear(frame.0, frame.1)
    }
}

fn load_shot(shot: &ShotRef) -> Result<VideoShot> {
    let frames = shot.frames.iter().map(load_frame_png).collect::<Result<Vec<_>>>()?;
    let ids = (0..shot.frames.len()).map(|t| shot.frame_id(t)).collect();
    VideoShot::with_frame_ids(shot.id.clone(), frames, ids)
}

/// VideoPCA masks for one shot, written under `out_dir` and scored by the
/// mean of their nonzero pixels (after 8-bit quantization, so a reloaded
/// mask scores the same).
pub fn discover_shot(shot: &ShotRef, cfg: &VideoPcaConfig, out_dir: &Path) -> Result<Vec<ManifestRow>> {
    let video = load_shot(shot)?;
    let masks = discover(&video, cfg)?;
    let mut rows = Vec::with_capacity(masks.len());
    for (t, m) in masks.iter().enumerate() {
        let q = m.quantized();
        let path = out_dir.join(shot.mask_rel(t));
        save_mask_png(&q, &path)?;
        rows.push(ManifestRow {
            frame_path: path_string(&shot.frames[t]),
            mask_path: path_string(&path),
            score: mean_nonzero_score(&q),
            producer: VIDEOPCA.into(),
        });
    }
    Ok(rows)
}

/// Runs VideoPCA on a single shot directory of PNG frames.
pub fn discover_dir(shot_dir: &Path, cfg: &VideoPcaConfig, out_dir: &Path) -> Result<Vec<ManifestRow>> {
    let video = load_shot_dir(shot_dir)?;
    let masks = discover(&video, cfg)?;
    let frames = crate::imgcore::list_pngs(shot_dir)?;
    let mut rows = Vec::new();
    for (m, frame_path) in masks.iter().zip(&frames) {
        let q = m.quantized();
        let path = out_dir.join(frame_path.file_name().unwrap_or_default());
        save_mask_png(&q, &path)?;
        rows.push(ManifestRow {
            frame_path: path_string(frame_path),
            mask_path: path_string(&path),
            score: mean_nonzero_score(&q),
            producer: VIDEOPCA.into(),
        });
    }
    Ok(rows)
}

fn rank_rows(rows: &mut [ManifestRow]) {
    rows.sort_by(|a, b| {
        rank_cmp(
            (a.score, &a.frame_path, &a.producer),
            (b.score, &b.frame_path, &b.producer),
        )
    });
}

/// Applies a selection policy to scored candidates; output is in rank order.
pub fn select_rows(mut rows: Vec<ManifestRow>, policy: &SelectionPolicy) -> Result<Vec<ManifestRow>> {
    policy.validate()?;
    match *policy {
        SelectionPolicy::Percentile { keep } => {
            let n = keep_count(rows.len(), keep);
            rank_rows(&mut rows);
            rows.truncate(n);
        }
        SelectionPolicy::Threshold { tau } => {
            rows.retain(|r| r.score >= tau);
            rank_rows(&mut rows);
        }
    }
    Ok(rows)
}

/// At most `max` rows taken at even strides through `rows`, so the cap thins
/// the list without favouring its head. `max == 0` means no cap.
pub fn cap_rows(rows: Vec<ManifestRow>, max: usize) -> Vec<ManifestRow> {
    let n = rows.len();
    if max == 0 || n <= max {
        return rows;
    }
    let mut out = Vec::with_capacity(max);
    let mut next = 0;
    for (i, r) in rows.into_iter().enumerate() {
        if out.len() < max && i == next * n / max {
            out.push(r);
            next += 1;
        }
    }
    out
}

/// Scores every mask listed in `rows` with an evaluator, replacing the scores.
pub fn rescore_rows(rows: &mut [ManifestRow], evaluator: &Evaluator) -> Result<()> {
    for r in rows.iter_mut() {
        let frame = load_frame_png(&r.frame_path)?;
        let mask = load_mask_png(&r.mask_path)?;
        r.score = evaluator.score_batch(&frame, std::slice::from_ref(&mask))?[0];
    }
    Ok(())
}

pub fn load_pairs(rows: &[ManifestRow]) -> Result<Vec<(Frame, SoftMask)>> {
    rows.iter()
        .map(|r| Ok((load_frame_png(&r.frame_path)?, load_mask_png(&r.mask_path)?)))
        .collect()
}

pub fn train_from_manifest(
    rows: &[ManifestRow],
    arch: &StudentArch,
    cfg: &TrainConfig,
) -> Result<(StudentNet, Vec<f64>)> {
    let pairs = load_pairs(rows)?;
    train_student(arch, &pairs, cfg)
}

/// Per-epoch loss trace as `epoch,loss` CSV.
pub fn write_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", i + 1));
    }
    write_text(path, &s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Every PNG below `dir` (searching `dir/frames` when it exists) with its
/// path relative to the search root, in sorted order.
pub fn collect_pngs(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let base = if dir.join("frames").is_dir() {
        dir.join("frames")
    } else {
        dir.to_path_buf()
    };
    let mut out = Vec::new();
    walk(&base, &base, &mut out)?;
    out.sort();
    Ok(out)
}

fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, PathBuf)>) -> Result<()> {
    let mut entries = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        entries.push(e.map_err(|e| Error::io(dir, e))?.path());
    }
    for p in entries {
        if p.is_dir() {
            walk(base, &p, out)?;
        } else if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            let rel = p.strip_prefix(base).unwrap_or(&p).to_path_buf();
            out.push((p, rel));
        }
    }
    Ok(())
}

/// Frame id of a relative mask or frame path: `<shot>/<stem>`, i.e. the last
/// directory and the file stem. Any leading directories are ignored.
pub fn frame_id_of(rel: &Path) -> String {
    let s = rel.with_extension("");
    let parts: Vec<String> = s
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    parts[parts.len().saturating_sub(2)..].join("/")
}

/// Predicts a mask for every frame below `frame_dir`, saved at frame size
/// under the same relative path in `out_dir`.
pub fn predict_dir(net: &StudentNet, frame_dir: &Path, out_dir: &Path) -> Result<usize> {
    let frames = collect_pngs(frame_dir)?;
    for (path, rel) in &frames {
        let f = load_frame_png(path)?;
        let m = to_frame_size(&net.predict(&f)?, f.dims())?;
        save_mask_png(&m, out_dir.join(rel))?;
    }
    Ok(frames.len())
}

/// Multi-Net and MultiSelect masks for one frame, both at frame size. The
/// MultiSelect result carries the chosen member's architecture id.
pub fn ensemble_frame(
    pool: &StudentPool,
    evaluator: &Evaluator,
    frame: &Frame,
) -> Result<(SoftMask, &'static str, SoftMask, Vec<SoftMask>)> {
    let masks = pool.predict_all(frame)?;
    let product = multi_net(&masks)?;
    let (idx, chosen) = multiselect_net(frame, &masks, evaluator)?;
    Ok((
        to_frame_size(&product, frame.dims())?,
        pool.members()[idx].arch.id(),
        to_frame_size(&chosen, frame.dims())?,
        masks,
    ))
}

/// Writes Multi-Net masks to `out/multi_net/`, MultiSelect masks to
/// `out/multiselect/`, and returns next-generation training rows: every
/// member mask (saved under `out/<arch>/`) with its evaluator score >= `tau`.
pub fn ensemble_dir(
    pool: &StudentPool,
    evaluator: &Evaluator,
    frame_dir: &Path,
    out_dir: &Path,
    tau: f64,
) -> Result<Vec<ManifestRow>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau {tau} not in [0, 1]")));
    }
    let mut rows = Vec::new();
    for (path, rel) in collect_pngs(frame_dir)? {
        let f = load_frame_png(&path)?;
        let (product, _, chosen, masks) = ensemble_frame(pool, evaluator, &f)?;
        save_mask_png(&product, out_dir.join(MULTI_NET).join(&rel))?;
        save_mask_png(&chosen, out_dir.join(MULTISELECT).join(&rel))?;
        let scores = evaluator.score_batch(&f, &masks)?;
        for ((m, s), member) in masks.iter().zip(scores).zip(pool.members()) {
            if s >= tau {
                let mp = out_dir.join(member.arch.id()).join(&rel);
                save_mask_png(&to_frame_size(m, f.dims())?, &mp)?;
                rows.push(ManifestRow {
                    frame_path: path_string(&path),
                    mask_path: path_string(&mp),
                    score: s,
                    producer: member.arch.id().into(),
                });
            }
        }
    }
    Ok(rows)
}

/// One row of the `boxes` output.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRow {
    pub frame_id: String,
    pub bbox: Option<crate::imgcore::BoundingBox>,
}

/// The primary box of every mask below `mask_dir`, in mask pixel coordinates.
pub fn boxes_dir(mask_dir: &Path, cfg: &PostprocConfig) -> Result<Vec<BoxRow>> {
    let mut out = Vec::new();
    for (path, rel) in collect_pngs(mask_dir)? {
        let m = load_mask_png(&path)?;
        out.push(BoxRow {
            frame_id: frame_id_of(&rel),
            bbox: primary_box(&m, m.width(), m.height(), cfg)?,
        });
    }
    Ok(out)
}

pub fn write_boxes(path: &Path, rows: &[BoxRow]) -> Result<()> {
    let mut s = String::from("frame_id,x_min,y_min,x_max,y_max\n");
    for r in rows {
        match r.bbox {
            Some(b) => s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.frame_id, b.x_min, b.y_min, b.x_max, b.y_max
            )),
            None => s.push_str(&format!("{},,,,\n", r.frame_id)),
        }
    }
    write_text(path, &s)
}
