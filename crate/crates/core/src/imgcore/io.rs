use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use super::{Frame, SoftMask, VideoShot};
use crate::error::{Error, Result};

/// `[0, 1]` to byte, rounding half up.
pub fn encode_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

pub fn decode_byte(b: u8) -> f64 {
    b as f64 / 255.0
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn load_frame_png(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(decode_byte).collect();
    Frame::new(w as usize, h as usize, data)
}

pub fn save_frame_png(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let bytes = frame.data().iter().map(|&v| encode_byte(v)).collect();
    let img = RgbImage::from_raw(frame.width() as u32, frame.height() as u32, bytes)
        .expect("buffer length matches frame dimensions");
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn load_mask_png(path: impl AsRef<Path>) -> Result<SoftMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(decode_byte).collect();
    SoftMask::new(w as usize, h as usize, data)
}

pub fn save_mask_png(mask: &SoftMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let bytes = mask.data().iter().map(|&v| encode_byte(v)).collect();
    let img = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes)
        .expect("buffer length matches mask dimensions");
    img.save(path).map_err(|e| image_err(path, e))
}

/// PNG files directly inside `dir`, in lexicographic order.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file()
            && path
                .extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("png"))
        {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Loads a shot stored as a directory of PNG frames. The shot id is the
/// directory name and frame ids are `<shot>/<file stem>`.
pub fn load_shot_dir(dir: impl AsRef<Path>) -> Result<VideoShot> {
    let dir = dir.as_ref();
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "shot".to_owned());
    let paths = list_pngs(dir)?;
    let mut frames = Vec::with_capacity(paths.len());
    let mut ids = Vec::with_capacity(paths.len());
    for p in &paths {
        frames.push(load_frame_png(p)?);
        let stem = p.file_stem().unwrap_or_default().to_string_lossy();
        ids.push(format!("{id}/{stem}"));
    }
    VideoShot::with_frame_ids(id, frames, ids)
}
