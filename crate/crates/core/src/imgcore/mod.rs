//! Image, mask, box and shot types shared by every stage.
//!
//! Pixel values are stored as `f64` in `[0, 1]`, row-major, origin at the
//! top-left corner with `x` growing rightward and `y` downward. RGB frames
//! interleave their three channels per pixel.

mod io;
mod resample;

pub use io::{
    decode_byte, encode_byte, list_pngs, load_frame_png, load_mask_png, load_shot_dir,
    save_frame_png, save_mask_png,
};
pub use resample::Window;

use crate::error::{Error, Result};

fn check_unit_range(data: &[f64], what: &str) -> Result<()> {
    if let Some((i, v)) = data
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
    {
        return Err(Error::invalid(format!(
            "{what} value {v} at index {i} is outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_dims(width: usize, height: usize, what: &str) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "{what} dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

/// An RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, "frame")?;
        if data.len() != width * height * Self::CHANNELS {
            return Err(Error::invalid(format!(
                "frame {width}x{height} needs {} values, got {}",
                width * height * Self::CHANNELS,
                data.len()
            )));
        }
        check_unit_range(&data, "frame")?;
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    /// Builds a frame from a per-pixel color function.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Frame::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        Frame::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Bilinear resize with align-corners sampling.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Frame> {
        self.resample(Window::full(self.width, self.height), width, height)
    }

    /// Samples `window` (source pixel-center coordinates) onto a `width`x`height` grid.
    pub fn resample(&self, window: Window, width: usize, height: usize) -> Result<Frame> {
        check_dims(width, height, "resize target")?;
        let data = resample::resample(
            &self.data,
            self.width,
            self.height,
            3,
            window,
            width,
            height,
        );
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    /// Periodic shift by `(dx, dy)`; pixel `(x, y)` moves to `(x + dx, y + dy)` modulo size.
    pub fn roll(&self, dx: isize, dy: isize) -> Frame {
        let data = roll(&self.data, self.width, self.height, 3, dx, dy);
        Frame {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Per-pixel luminance `0.299 R + 0.587 G + 0.114 B`.
    pub fn to_grayscale(&self) -> SoftMask {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        SoftMask {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Free-function form of [`Frame::to_grayscale`].
pub fn to_grayscale(frame: &Frame) -> SoftMask {
    frame.to_grayscale()
}

/// Per-pixel foreground confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, "mask")?;
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        check_unit_range(&data, "mask")?;
        Ok(SoftMask {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        SoftMask::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        SoftMask::new(width, height, data)
    }

    /// Clamps each value into `[0, 1]`; NaN becomes 0.
    pub(crate) fn from_raw_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        SoftMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<SoftMask> {
        self.resample(Window::full(self.width, self.height), width, height)
    }

    pub fn resample(&self, window: Window, width: usize, height: usize) -> Result<SoftMask> {
        check_dims(width, height, "resize target")?;
        let data = resample::resample(
            &self.data,
            self.width,
            self.height,
            1,
            window,
            width,
            height,
        );
        Ok(SoftMask {
            width,
            height,
            data,
        })
    }

    pub fn roll(&self, dx: isize, dy: isize) -> SoftMask {
        let data = roll(&self.data, self.width, self.height, 1, dx, dy);
        SoftMask {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Multiplies every value by `c` in `[0, 1]`.
    pub fn scaled(&self, c: f64) -> Result<SoftMask> {
        SoftMask::new(
            self.width,
            self.height,
            self.data.iter().map(|v| v * c).collect(),
        )
    }

    /// Quantizes through the 8-bit file encoding and back.
    pub fn quantized(&self) -> SoftMask {
        SoftMask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| decode_byte(encode_byte(v)))
                .collect(),
        }
    }
}

/// Per-pixel foreground flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height, "binary mask")?;
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "binary mask {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self> {
        BinaryMask::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryMask::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// 1.0 for foreground, 0.0 for background.
    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    /// Tight box around the true pixels, if any.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut hull: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] {
                    hull = Some(match hull {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        hull.map(|(x0, y0, x1, y1)| BoundingBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        })
    }
}

/// Axis-aligned box with inclusive pixel corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::invalid(format!(
                "box ({x_min},{y_min})-({x_max},{y_max}) has inverted corners"
            )));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    /// Inclusive pixel count.
    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.x_max < width && self.y_max < height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_min <= x_max && y_min <= y_max).then_some(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }
}

/// The frames of one video shot, all of the same size.
#[derive(Debug, Clone)]
pub struct VideoShot {
    id: String,
    frames: Vec<Frame>,
    frame_ids: Vec<String>,
}

impl VideoShot {
    /// Frame identifiers default to `<id>/<index>`.
    pub fn new(id: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        let id = id.into();
        let frame_ids = (0..frames.len()).map(|i| format!("{id}/{i:04}")).collect();
        VideoShot::with_frame_ids(id, frames, frame_ids)
    }

    pub fn with_frame_ids(
        id: impl Into<String>,
        frames: Vec<Frame>,
        frame_ids: Vec<String>,
    ) -> Result<Self> {
        let id = id.into();
        if frames.len() < 2 {
            return Err(Error::invalid(format!(
                "shot `{id}` needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        if frame_ids.len() != frames.len() {
            return Err(Error::invalid(format!(
                "shot `{id}` has {} frames but {} frame ids",
                frames.len(),
                frame_ids.len()
            )));
        }
        let dims = frames[0].dims();
        if let Some(f) = frames.iter().find(|f| f.dims() != dims) {
            return Err(Error::invalid(format!(
                "shot `{id}` mixes frame sizes {:?} and {:?}",
                dims,
                f.dims()
            )));
        }
        Ok(VideoShot {
            id,
            frames,
            frame_ids,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame_ids(&self) -> &[String] {
        &self.frame_ids
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }
}

/// A soft mask together with its quality score and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMask {
    pub mask: SoftMask,
    pub score: f64,
    pub source: String,
    pub frame_id: String,
}

impl ScoredMask {
    pub fn new(
        mask: SoftMask,
        score: f64,
        source: impl Into<String>,
        frame_id: impl Into<String>,
    ) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::invalid(format!("mask score {score} is not finite")));
        }
        Ok(ScoredMask {
            mask,
            score,
            source: source.into(),
            frame_id: frame_id.into(),
        })
    }
}

fn roll(data: &[f64], w: usize, h: usize, ch: usize, dx: isize, dy: isize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    let (wi, hi) = (w as isize, h as isize);
    for y in 0..h {
        let ty = (y as isize + dy).rem_euclid(hi) as usize;
        for x in 0..w {
            let tx = (x as isize + dx).rem_euclid(wi) as usize;
            let src = (y * w + x) * ch;
            let dst = (ty * w + tx) * ch;
            out[dst..dst + ch].copy_from_slice(&data[src..src + ch]);
        }
    }
    out
}
