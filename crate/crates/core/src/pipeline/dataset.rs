//! Corpus roots on disk: `<root>/frames/<shot>/<frame>.png`, with optional
//! ground truth under `<root>/gt/`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imgcore::list_pngs;

/// Share of the primary root's shots held out for evaluation.
pub const HELD_OUT_FRACTION: f64 = 0.2;

/// One shot directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotRef {
    /// Index of the root in the dataset's root list.
    pub root: usize,
    pub id: String,
    pub frames: Vec<PathBuf>,
}

impl ShotRef {
    /// `<shot>/<file stem>`, the id used by ground-truth box files.
    pub fn frame_id(&self, t: usize) -> String {
        let stem = self.frames[t].file_stem().unwrap_or_default().to_string_lossy();
        format!("{}/{stem}", self.id)
    }

    /// Relative location used for derived masks: `r<root>/<shot>/<stem>.png`.
    pub fn mask_rel(&self, t: usize) -> PathBuf {
        let name = self.frames[t].file_name().unwrap_or_default();
        PathBuf::from(format!("r{}", self.root)).join(&self.id).join(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub roots: Vec<PathBuf>,
    pub shots: Vec<ShotRef>,
}

pub fn frames_dir(root: &Path) -> PathBuf {
    root.join("frames")
}

pub fn gt_dir(root: &Path) -> PathBuf {
    root.join("gt")
}

fn shot_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let dir = frames_dir(root);
    let mut out = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let p = entry.map_err(|e| Error::io(&dir, e))?.path();
        if p.is_dir() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

impl Dataset {
    /// Lists every shot of every root, roots in order and shots by id.
    pub fn scan(roots: &[PathBuf]) -> Result<Dataset> {
        let mut shots = Vec::new();
        for (ri, root) in roots.iter().enumerate() {
            for dir in shot_dirs(root)? {
                let frames = list_pngs(&dir)?;
                if frames.is_empty() {
                    continue;
                }
                let id = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
                shots.push(ShotRef { root: ri, id, frames });
            }
        }
        Ok(Dataset {
            roots: roots.to_vec(),
            shots,
        })
    }

    /// Number of held-out shots: the last 20% (rounded up) of the primary
    /// root, always leaving one shot for training.
    pub fn held_out_count(&self) -> usize {
        let n = self.shots.iter().filter(|s| s.root == 0).count();
        if n < 2 {
            return 0;
        }
        ((HELD_OUT_FRACTION * n as f64).ceil() as usize).min(n - 1)
    }

    /// `(training shots, held-out shots)`.
    pub fn split(&self) -> (Vec<&ShotRef>, Vec<&ShotRef>) {
        let primary = self.shots.iter().filter(|s| s.root == 0).count();
        let cut = primary - self.held_out_count();
        let mut train = Vec::new();
        let mut held = Vec::new();
        let mut seen = 0;
        for s in &self.shots {
            if s.root == 0 {
                if seen < cut {
                    train.push(s);
                } else {
                    held.push(s);
                }
                seen += 1;
            } else {
                train.push(s);
            }
        }
        (train, held)
    }

    pub fn frame_count(&self) -> usize {
        self.shots.iter().map(|s| s.frames.len()).sum()
    }
}
