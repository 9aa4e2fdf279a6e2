//! Mask post-processing: threshold, 4-connected components, tight boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, BoundingBox, Frame, SoftMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocConfig {
    pub threshold: f64,
    pub min_area_fraction: f64,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig {
            threshold: 0.5,
            min_area_fraction: 0.005,
        }
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("postproc.threshold must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.min_area_fraction) {
            return Err(Error::Config(
                "postproc.min_area_fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Pixel `true` iff value >= `t`.
pub fn binarize(m: &SoftMask, t: f64) -> BinaryMask {
    let (w, h) = m.dims();
    BinaryMask::new(w, h, m.data().iter().map(|&v| v >= t).collect()).expect("same dims")
}

/// Horizontal run `x0..=x1` on row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub y: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Run {
    pub fn len(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A 4-connected set of pixels stored as raster-ordered runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub runs: Vec<Run>,
    pub bbox: BoundingBox,
    pub area: usize,
}

impl Component {
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.runs
            .iter()
            .flat_map(|r| (r.x0..=r.x1).map(move |x| (x, r.y)))
    }

    /// First pixel in raster order.
    pub fn first_pixel(&self) -> (usize, usize) {
        let r = self.runs[0];
        (r.x0, r.y)
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // smaller index as root keeps labels in raster order
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// 4-connected components sorted by area (descending), ties by first pixel in raster order.
pub fn connected_components(b: &BinaryMask) -> Vec<Component> {
    let (w, h) = b.dims();
    let data = b.data();
    let mut runs: Vec<Run> = Vec::new();
    let mut row_start = Vec::with_capacity(h + 1);
    for y in 0..h {
        row_start.push(runs.len());
        let row = &data[y * w..(y + 1) * w];
        let mut x = 0;
        while x < w {
            if row[x] {
                let x0 = x;
                while x + 1 < w && row[x + 1] {
                    x += 1;
                }
                runs.push(Run { y, x0, x1: x });
            }
            x += 1;
        }
    }
    row_start.push(runs.len());

    let mut parent: Vec<usize> = (0..runs.len()).collect();
    for y in 1..h {
        let (prev, cur) = (row_start[y - 1]..row_start[y], row_start[y]..row_start[y + 1]);
        let mut i = prev.start;
        let mut j = cur.start;
        while i < prev.end && j < cur.end {
            let (a, c) = (runs[i], runs[j]);
            if a.x0 <= c.x1 && c.x0 <= a.x1 {
                union(&mut parent, i, j);
            }
            if a.x1 < c.x1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let mut slot = vec![usize::MAX; runs.len()];
    let mut groups: Vec<Vec<Run>> = Vec::new();
    for i in 0..runs.len() {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(runs[i]);
    }

    let mut comps: Vec<Component> = groups
        .into_iter()
        .map(|runs| {
            let area = runs.iter().map(Run::len).sum();
            let x_min = runs.iter().map(|r| r.x0).min().unwrap_or(0);
            let x_max = runs.iter().map(|r| r.x1).max().unwrap_or(0);
            let y_min = runs[0].y;
            let y_max = runs[runs.len() - 1].y;
            Component {
                bbox: BoundingBox::new(x_min, y_min, x_max, y_max).expect("ordered corners"),
                runs,
                area,
            }
        })
        .collect();
    comps.sort_by(|a, b| {
        b.area.cmp(&a.area).then_with(|| {
            let (ax, ay) = a.first_pixel();
            let (bx, by) = b.first_pixel();
            (ay, ax).cmp(&(by, bx))
        })
    });
    comps
}

/// Tight boxes of components whose area is at least `min_area_fraction` of the image.
pub fn fit_boxes(
    comps: &[Component],
    width: usize,
    height: usize,
    min_area_fraction: f64,
) -> Vec<BoundingBox> {
    let min_area = min_area_fraction * (width * height) as f64;
    comps
        .iter()
        .filter(|c| c.area as f64 >= min_area)
        .map(|c| c.bbox)
        .collect()
}

/// Upsample to the frame size, threshold, and return the largest surviving box.
pub fn primary_box(
    m: &SoftMask,
    frame_width: usize,
    frame_height: usize,
    cfg: &PostprocConfig,
) -> Result<Option<BoundingBox>> {
    let up;
    let m = if m.dims() == (frame_width, frame_height) {
        m
    } else {
        up = m.resize_bilinear(frame_width, frame_height)?;
        &up
    };
    let comps = connected_components(&binarize(m, cfg.threshold));
    Ok(fit_boxes(&comps, frame_width, frame_height, cfg.min_area_fraction)
        .into_iter()
        .next())
}

/// Extension point for mask refinement before box fitting.
pub trait Refiner {
    fn refine(&self, frame: &Frame, mask: &BinaryMask) -> BinaryMask;
}

/// The default refiner: returns the mask unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoRefine;

impl Refiner for NoRefine {
    fn refine(&self, _frame: &Frame, mask: &BinaryMask) -> BinaryMask {
        mask.clone()
    }
}
