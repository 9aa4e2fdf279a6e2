//! Student ensembles: pixel-wise product fusion, evaluator-driven selection,
//! and the second-generation teacher.

use crate::error::{Error, Result};
use crate::imgcore::{Frame, SoftMask};
use crate::masksel::{Evaluator, MaskScorer};
use crate::student::StudentNet;

/// Students acting in parallel, kept in architecture-id order.
#[derive(Debug, Clone)]
pub struct StudentPool {
    members: Vec<StudentNet>,
    grid: (usize, usize),
}

impl StudentPool {
    pub fn new(mut members: Vec<StudentNet>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "a student pool needs at least 2 members, got {}",
                members.len()
            )));
        }
        members.sort_by(|a, b| a.arch.id().cmp(b.arch.id()));
        // largest output resolution
        let grid = members
            .iter()
            .map(|m| m.arch.output_dims())
            .max_by_key(|&(w, h)| w * h)
            .expect("non-empty");
        Ok(StudentPool { members, grid })
    }

    pub fn members(&self) -> &[StudentNet] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// The common fusion grid `(width, height)`.
    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    /// Every member's prediction, resized to the common grid.
    pub fn predict_all(&self, frame: &Frame) -> Result<Vec<SoftMask>> {
        let (w, h) = self.grid;
        self.members
            .iter()
            .map(|m| {
                let p = m.predict(frame)?;
                if p.dims() == (w, h) {
                    Ok(p)
                } else {
                    p.resize_bilinear(w, h)
                }
            })
            .collect()
    }
}

/// Pixel-wise product of the masks (no renormalization).
pub fn multi_net(masks: &[SoftMask]) -> Result<SoftMask> {
    if masks.len() < 2 {
        return Err(Error::invalid(format!(
            "product fusion needs at least 2 masks, got {}",
            masks.len()
        )));
    }
    let dims = masks[0].dims();
    if masks.iter().any(|m| m.dims() != dims) {
        return Err(Error::invalid("masks to fuse differ in size"));
    }
    let mut out = masks[0].data().to_vec();
    for m in &masks[1..] {
        for (o, v) in out.iter_mut().zip(m.data()) {
            *o *= v;
        }
    }
    SoftMask::new(dims.0, dims.1, out)
}

/// Index and copy of the highest-scoring candidate; the first wins ties.
pub fn multiselect_net(
    frame: &Frame,
    masks: &[SoftMask],
    scorer: &dyn MaskScorer,
) -> Result<(usize, SoftMask)> {
    if masks.is_empty() {
        return Err(Error::invalid("no candidates to select from"));
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, m) in masks.iter().enumerate() {
        let s = scorer.score(frame, m)?;
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    Ok((best, masks[best].clone()))
}

/// Like [`multiselect_net`] with already computed scores.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// One second-generation training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPair {
    pub frame: usize,
    /// Architecture id of the student that produced the mask.
    pub producer: &'static str,
    pub mask: SoftMask,
    pub score: f64,
}

/// Every student mask whose evaluator score is >= `tau`, each judged on its own.
pub fn generation_teacher(
    pool: &StudentPool,
    frames: &[Frame],
    evaluator: &Evaluator,
    tau: f64,
) -> Result<Vec<TeacherPair>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau {tau} not in [0, 1]")));
    }
    let mut out = Vec::new();
    for (fi, frame) in frames.iter().enumerate() {
        let masks = pool.predict_all(frame)?;
        let scores = evaluator.score_batch(frame, &masks)?;
        for ((m, s), member) in masks.into_iter().zip(scores).zip(pool.members()) {
            if s >= tau {
                out.push(TeacherPair {
                    frame: fi,
                    producer: member.arch.id(),
                    mask: m,
                    score: s,
                });
            }
        }
    }
    Ok(out)
}
