//! Seeded synthetic videos: a textured square moving over a static noise
//! background, with ground-truth masks and boxes.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{save_frame_png, save_mask_png, BinaryMask, BoundingBox, Frame, VideoShot};

pub const TEXTURES: [&str; 2] = ["checker", "stripes"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub shots: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Object side as a fraction of the smaller frame side.
    pub object_min: f64,
    pub object_max: f64,
    /// Object speed in pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Share of shots whose object does not move.
    pub static_fraction: f64,
    /// Amplitude of the static background texture.
    pub background_noise: f64,
    /// Amplitude of independent per-frame noise.
    pub sensor_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            shots: 200,
            frames: 30,
            width: 64,
            height: 64,
            object_min: 0.25,
            object_max: 0.4,
            speed_min: 0.8,
            speed_max: 2.5,
            static_fraction: 0.1,
            background_noise: 0.04,
            sensor_noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.shots == 0 || self.frames < 2 {
            return bad("need at least one shot of two frames");
        }
        if self.width < 4 || self.height < 4 {
            return bad("frames must be at least 4x4");
        }
        if !(0.0 < self.object_min && self.object_min <= self.object_max && self.object_max <= 1.0) {
            return bad("object size range must satisfy 0 < min <= max <= 1");
        }
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max && self.speed_max.is_finite()) {
            return bad("speed range must satisfy 0 <= min <= max");
        }
        if !(0.0..=1.0).contains(&self.static_fraction) {
            return bad("static_fraction must lie in [0, 1]");
        }
        if !(0.0..0.5).contains(&self.background_noise) || !(0.0..0.5).contains(&self.sensor_noise) {
            return bad("noise amplitudes must lie in [0, 0.5)");
        }
        Ok(())
    }

    pub fn object_side(&self, fraction: f64) -> usize {
        let s = (fraction * self.width.min(self.height) as f64).round() as usize;
        s.clamp(1, self.width.min(self.height))
    }
}

/// One generated shot with its annotations.
#[derive(Debug, Clone)]
pub struct SynthShot {
    pub shot: VideoShot,
    pub class: &'static str,
    pub masks: Vec<BinaryMask>,
    pub boxes: Vec<BoundingBox>,
    pub speed: f64,
}

pub fn shot_id(i: usize) -> String {
    format!("shot_{i:04}")
}

/// Quantized to the middle of one of eight levels so the static texture stays
/// within a single color-histogram bin.
fn bin_center(rng: &mut SplitMix64) -> f64 {
    (rng.random_range(0..8) as f64 + 0.5) / 8.0
}

/// Each channel sits 3/8 or 1/2 away from the background, so every object
/// color stands out from the background by a similar amount.
fn object_color(rng: &mut SplitMix64, bg: [f64; 3]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for (ci, &b) in c.iter_mut().zip(&bg) {
        let d = if rng.random::<bool>() { 0.375 } else { 0.5 };
        *ci = if b + d <= 1.0 { b + d } else { b - d };
    }
    c
}

fn object_colors(rng: &mut SplitMix64, bg: [f64; 3]) -> [[f64; 3]; 2] {
    let a = object_color(rng, bg);
    loop {
        let b = object_color(rng, bg);
        if b != a {
            return [a, b];
        }
    }
}

fn noise(rng: &mut SplitMix64, amp: f64) -> f64 {
    if amp == 0.0 {
        0.0
    } else {
        rng.random_range(-amp..=amp)
    }
}

/// Reflects `p` moving at `v` into `[0, max]`.
fn bounce(p: &mut f64, v: &mut f64, max: f64) {
    *p += *v;
    if max <= 0.0 {
        *p = 0.0;
        return;
    }
    while *p < 0.0 || *p > max {
        if *p < 0.0 {
            *p = -*p;
        } else {
            *p = 2.0 * max - *p;
        }
        *v = -*v;
    }
}

pub fn synthesize_shot(spec: &SyntheticSpec, index: usize) -> Result<SynthShot> {
    spec.validate()?;
    let mut rng = SplitMix64::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64);
    let (w, h) = (spec.width, spec.height);
    let bg = [bin_center(&mut rng), bin_center(&mut rng), bin_center(&mut rng)];
    let texture: Vec<f64> = (0..w * h * 3)
        .map(|_| noise(&mut rng, spec.background_noise))
        .collect();
    let colors = object_colors(&mut rng, bg);
    let class_idx = rng.random_range(0..TEXTURES.len());
    let frac = rng.random_range(spec.object_min..=spec.object_max);
    let side = spec.object_side(frac);
    let (max_x, max_y) = ((w - side) as f64, (h - side) as f64);
    let mut px = rng.random_range(0.0..=max_x);
    let mut py = rng.random_range(0.0..=max_y);
    let is_static = rng.random::<f64>() < spec.static_fraction;
    let speed = if is_static {
        0.0
    } else {
        rng.random_range(spec.speed_min..=spec.speed_max)
    };
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (mut vx, mut vy) = (speed * angle.cos(), speed * angle.sin());

    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    let mut boxes = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        if t > 0 {
            bounce(&mut px, &mut vx, max_x);
            bounce(&mut py, &mut vy, max_y);
        }
        let (x0, y0) = (px.round() as usize, py.round() as usize);
        let bbox = BoundingBox::new(x0, y0, x0 + side - 1, y0 + side - 1)?;
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let rgb = if bbox.contains(x, y) {
                    let (ox, oy) = (x - x0, y - y0);
                    let which = match class_idx {
                        0 => (ox / 4 + oy / 4) % 2,
                        _ => (ox / 3) % 2,
                    };
                    colors[which]
                } else {
                    let i = (y * w + x) * 3;
                    [bg[0] + texture[i], bg[1] + texture[i + 1], bg[2] + texture[i + 2]]
                };
                for c in rgb {
                    data.push((c + noise(&mut rng, spec.sensor_noise)).clamp(0.0, 1.0));
                }
            }
        }
        frames.push(Frame::new(w, h, data)?);
        masks.push(BinaryMask::from_fn(w, h, |x, y| bbox.contains(x, y))?);
        boxes.push(bbox);
    }
    Ok(SynthShot {
        shot: VideoShot::new(shot_id(index), frames)?,
        class: TEXTURES[class_idx],
        masks,
        boxes,
        speed,
    })
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<Vec<SynthShot>> {
    (0..spec.shots).map(|i| synthesize_shot(spec, i)).collect()
}

/// Writes `frames/<shot>/<t>.png`, `gt/<shot>/<t>.png` and `gt/boxes.csv` under `root`.
pub fn generate_synthetic(spec: &SyntheticSpec, root: impl AsRef<Path>) -> Result<()> {
    spec.validate()?;
    let root = root.as_ref();
    let gt_dir = root.join("gt");
    fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;
    let csv_path = gt_dir.join("boxes.csv");
    let mut csv = String::from("frame_id,class,x_min,y_min,x_max,y_max\n");
    for i in 0..spec.shots {
        let s = synthesize_shot(spec, i)?;
        let id = s.shot.id().to_string();
        for (t, ((frame, mask), b)) in s.shot.frames().iter().zip(&s.masks).zip(&s.boxes).enumerate() {
            let name = format!("{t:04}.png");
            save_frame_png(frame, root.join("frames").join(&id).join(&name))?;
            save_mask_png(&mask.to_soft(), gt_dir.join(&id).join(&name))?;
            csv.push_str(&format!(
                "{id}/{t:04},{},{},{},{},{}\n",
                s.class, b.x_min, b.y_min, b.x_max, b.y_max
            ));
        }
    }
    let mut f = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    f.write_all(csv.as_bytes()).map_err(|e| Error::io(&csv_path, e))?;
    Ok(())
}
