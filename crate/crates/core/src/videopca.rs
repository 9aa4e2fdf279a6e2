//! First-generation teacher: PCA background model of a shot, residual-based
//! initial masks, per-frame color models and a centered Gaussian prior.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{BinaryMask, Frame, SoftMask, VideoShot};

/// Residual maxima below this are treated as exact reconstruction.
const RESIDUAL_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoPcaConfig {
    /// Number of principal components kept as background model.
    pub k: usize,
    /// `(width, height)` at which PCA and the color models run.
    pub work_resolution: (usize, usize),
    /// Gaussian blur applied to the residual, in work-resolution pixels.
    pub blur_sigma: f64,
    /// Threshold on the blurred residual as a fraction of its maximum.
    pub error_threshold: f64,
    /// Center prior width as a fraction of the image diagonal; `inf` disables it.
    pub center_sigma: f64,
    pub bins_per_channel: usize,
    /// Run PCA on luminance instead of RGB.
    pub use_grayscale: bool,
}

impl Default for VideoPcaConfig {
    fn default() -> Self {
        VideoPcaConfig {
            k: 8,
            work_resolution: (64, 64),
            blur_sigma: 4.0,
            error_threshold: 0.5,
            center_sigma: 0.35,
            bins_per_channel: 8,
            use_grayscale: true,
        }
    }
}

impl VideoPcaConfig {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.work_resolution;
        if w == 0 || h == 0 {
            return Err(Error::Config("videopca.work_resolution must be positive".into()));
        }
        if !(self.blur_sigma > 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::Config("videopca.blur_sigma must be > 0".into()));
        }
        if !(self.error_threshold > 0.0 && self.error_threshold < 1.0) {
            return Err(Error::Config(
                "videopca.error_threshold must lie in (0, 1)".into(),
            ));
        }
        if !(self.center_sigma > 0.0) {
            return Err(Error::Config("videopca.center_sigma must be > 0".into()));
        }
        if self.bins_per_channel == 0 || self.bins_per_channel > 64 {
            return Err(Error::Config(
                "videopca.bins_per_channel must lie in 1..=64".into(),
            ));
        }
        Ok(())
    }

    fn channels(&self) -> usize {
        if self.use_grayscale {
            1
        } else {
            3
        }
    }
}

/// Mean frame plus orthonormal principal directions of a shot.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Ordered by descending eigenvalue; largest-magnitude entry positive.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Work resolution `(width, height)`.
    pub frame_dims: (usize, usize),
    /// Size of the frames the model was fitted on.
    pub source_dims: (usize, usize),
    pub channels: usize,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Reconstruction residual `x - (mean + sum_j c_j P_j)` of a work-space vector.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for p in &self.components {
            let c: f64 = p.iter().zip(x).zip(&self.mean).map(|((p, a), m)| p * (a - m)).sum();
            for (ri, pi) in r.iter_mut().zip(p) {
                *ri -= c * pi;
            }
        }
        r
    }

    /// Projection onto the affine model `mean + span(components)`.
    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.residual(x))
            .map(|(a, r)| a - r)
            .collect()
    }
}

/// Resizes to the work resolution and flattens (luminance or interleaved RGB).
pub fn work_vector(frame: &Frame, cfg: &VideoPcaConfig) -> Result<Vec<f64>> {
    let (w, h) = cfg.work_resolution;
    let resized;
    let f = if frame.dims() == (w, h) {
        frame
    } else {
        resized = frame.resize_bilinear(w, h)?;
        &resized
    };
    Ok(if cfg.use_grayscale {
        f.to_grayscale().into_data()
    } else {
        f.data().to_vec()
    })
}

fn work_frame(frame: &Frame, cfg: &VideoPcaConfig) -> Result<Frame> {
    let (w, h) = cfg.work_resolution;
    if frame.dims() == (w, h) {
        Ok(frame.clone())
    } else {
        frame.resize_bilinear(w, h)
    }
}

/// Fits the background model via eigendecomposition of the frames' Gram matrix.
pub fn fit_pca(shot: &VideoShot, cfg: &VideoPcaConfig) -> Result<PcaModel> {
    cfg.validate()?;
    let n = shot.len();
    if cfg.k > n {
        return Err(Error::invalid(format!(
            "requested {} components from a {n}-frame shot",
            cfg.k
        )));
    }
    let xs = shot
        .frames()
        .iter()
        .map(|f| work_vector(f, cfg))
        .collect::<Result<Vec<_>>>()?;
    let d = xs[0].len();
    let mut mean = vec![0.0; d];
    for x in &xs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect();

    let mut components: Vec<Vec<f64>> = Vec::new();
    let mut eigenvalues: Vec<f64> = Vec::new();
    if cfg.k > 0 {
        let gram = DMatrix::<f64>::from_fn(n, n, |i, j| {
            centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum()
        });
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let tol = (top * 1e-12).max(1e-9);
        for &idx in order.iter() {
            if components.len() == cfg.k {
                break;
            }
            let lambda = eig.eigenvalues[idx];
            if lambda <= tol {
                break;
            }
            let coeffs = eig.eigenvectors.column(idx);
            let mut u = vec![0.0; d];
            for (i, c) in centered.iter().enumerate() {
                let a = coeffs[i];
                for (uj, cj) in u.iter_mut().zip(c) {
                    *uj += a * cj;
                }
            }
            // re-orthogonalize against accepted components
            for p in &components {
                let dot: f64 = dot(&u, p);
                for (uj, pj) in u.iter_mut().zip(p.iter()) {
                    *uj -= dot * pj;
                }
            }
            let norm = dot(&u, &u).sqrt();
            if norm <= lambda.sqrt() * 1e-6 {
                continue;
            }
            for v in &mut u {
                *v /= norm;
            }
            fix_sign(&mut u);
            components.push(u);
            eigenvalues.push(lambda);
        }
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        frame_dims: cfg.work_resolution,
        source_dims: shot.dims(),
        channels: cfg.channels(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flips `u` so that its largest-magnitude entry (first on ties) is positive.
pub(crate) fn fix_sign(u: &mut [f64]) {
    let mut best = 0;
    for (i, v) in u.iter().enumerate() {
        if v.abs() > u[best].abs() {
            best = i;
        }
    }
    if u.get(best).is_some_and(|&v| v < 0.0) {
        for v in u.iter_mut() {
            *v = -*v;
        }
    }
}

/// Per-pixel reconstruction residual magnitude at work resolution, scaled so
/// the frame maximum is 1.
pub fn reconstruction_error(model: &PcaModel, frame: &Frame, cfg: &VideoPcaConfig) -> Result<SoftMask> {
    if frame.dims() != model.source_dims {
        return Err(Error::invalid(format!(
            "frame is {:?} but the model was fitted on {:?} frames",
            frame.dims(),
            model.source_dims
        )));
    }
    if cfg.work_resolution != model.frame_dims || cfg.channels() != model.channels {
        return Err(Error::invalid("config does not match the fitted model"));
    }
    let x = work_vector(frame, cfg)?;
    let r = model.residual(&x);
    let (w, h) = model.frame_dims;
    let ch = model.channels;
    let mut err: Vec<f64> = r
        .chunks_exact(ch)
        .map(|p| p.iter().map(|v| v.abs()).sum::<f64>() / ch as f64)
        .collect();
    let max = err.iter().copied().fold(0.0, f64::max);
    if max <= RESIDUAL_FLOOR {
        err.fill(0.0);
    } else {
        for v in &mut err {
            *v /= max;
        }
    }
    Ok(SoftMask::from_raw_clamped(w, h, err))
}

/// Separable Gaussian blur with edge replication; the kernel spans `ceil(3 sigma)` pixels each side.
pub fn gaussian_blur(m: &SoftMask, sigma: f64) -> SoftMask {
    let (w, h) = m.dims();
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }
    let src = m.data();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + ki as isize - radius, w);
                acc += k * src[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + ki as isize - radius, h);
                acc += k * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    SoftMask::from_raw_clamped(w, h, out)
}

/// Blurs the residual and keeps pixels at or above `error_threshold * max`.
pub fn initial_binary_mask(err: &SoftMask, cfg: &VideoPcaConfig) -> BinaryMask {
    binarize_blurred(&gaussian_blur(err, cfg.blur_sigma), cfg.error_threshold)
}

fn binarize_blurred(blurred: &SoftMask, fraction: f64) -> BinaryMask {
    let max = blurred.max();
    let (w, h) = blurred.dims();
    if max <= 0.0 {
        return BinaryMask::filled(w, h, false).expect("positive dims");
    }
    let t = fraction * max;
    BinaryMask::new(w, h, blurred.data().iter().map(|&v| v >= t).collect()).expect("same dims")
}

/// Laplace-smoothed color histograms of the foreground and background pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorModel {
    pub bins_per_channel: usize,
    pub fg_hist: Vec<f64>,
    pub bg_hist: Vec<f64>,
}

impl ColorModel {
    pub fn bin(&self, rgb: [f64; 3]) -> usize {
        color_bin(rgb, self.bins_per_channel)
    }

    /// `P_fg / (P_fg + P_bg)` for one color.
    pub fn foreground_probability(&self, rgb: [f64; 3]) -> f64 {
        let b = self.bin(rgb);
        let (f, g) = (self.fg_hist[b], self.bg_hist[b]);
        if f + g > 0.0 {
            f / (f + g)
        } else {
            0.5
        }
    }
}

fn color_bin(rgb: [f64; 3], bins: usize) -> usize {
    let q = |v: f64| ((v * bins as f64).floor() as usize).min(bins - 1);
    (q(rgb[0]) * bins + q(rgb[1])) * bins + q(rgb[2])
}

pub fn fit_color_models(frame: &Frame, init: &BinaryMask, cfg: &VideoPcaConfig) -> Result<ColorModel> {
    if frame.dims() != init.dims() {
        return Err(Error::invalid(format!(
            "frame {:?} and mask {:?} differ in size",
            frame.dims(),
            init.dims()
        )));
    }
    let fg_count = init.count();
    if fg_count == 0 || fg_count == init.data().len() {
        return Err(Error::DegenerateMask(format!(
            "initial mask has {fg_count} of {} pixels set",
            init.data().len()
        )));
    }
    let bins = cfg.bins_per_channel;
    let n_bins = bins * bins * bins;
    let mut fg = vec![1.0; n_bins];
    let mut bg = vec![1.0; n_bins];
    let (w, h) = frame.dims();
    for y in 0..h {
        for x in 0..w {
            let b = color_bin(frame.pixel(x, y), bins);
            if init.get(x, y) {
                fg[b] += 1.0;
            } else {
                bg[b] += 1.0;
            }
        }
    }
    let (sf, sb): (f64, f64) = (fg.iter().sum(), bg.iter().sum());
    fg.iter_mut().for_each(|v| *v /= sf);
    bg.iter_mut().for_each(|v| *v /= sb);
    Ok(ColorModel {
        bins_per_channel: bins,
        fg_hist: fg,
        bg_hist: bg,
    })
}

pub fn classify_pixels(frame: &Frame, cm: &ColorModel) -> SoftMask {
    let (w, h) = frame.dims();
    let data = frame
        .data()
        .chunks_exact(3)
        .map(|p| cm.foreground_probability([p[0], p[1], p[2]]))
        .collect();
    SoftMask::from_raw_clamped(w, h, data)
}

/// `exp(-d^2 / (2 sigma^2))` at each pixel, `d` the distance to the image
/// center and `sigma = center_sigma * diagonal`, where the diagonal spans the
/// corner pixel centers.
pub fn center_gaussian(width: usize, height: usize, center_sigma: f64) -> SoftMask {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let diag = ((width as f64 - 1.0).powi(2) + (height as f64 - 1.0).powi(2)).sqrt();
    let sigma = center_sigma * diag;
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            data.push(if sigma.is_infinite() || d2 == 0.0 {
                1.0
            } else if sigma > 0.0 {
                (-d2 / (2.0 * sigma * sigma)).exp()
            } else {
                0.0
            });
        }
    }
    SoftMask::from_raw_clamped(width, height, data)
}

pub fn apply_center_prior(m: &SoftMask, center_sigma: f64) -> SoftMask {
    if center_sigma.is_infinite() {
        return m.clone();
    }
    let (w, h) = m.dims();
    let g = center_gaussian(w, h, center_sigma);
    let data = m.data().iter().zip(g.data()).map(|(a, b)| a * b).collect();
    SoftMask::from_raw_clamped(w, h, data)
}

/// Per-frame teacher output together with how it was obtained.
#[derive(Debug, Clone)]
pub struct DiscoveredMask {
    pub mask: SoftMask,
    /// The color model was degenerate and the blurred residual was used instead.
    pub fallback: bool,
}

/// Soft foreground masks for every frame of `shot`, at the shot's frame size.
pub fn discover(shot: &VideoShot, cfg: &VideoPcaConfig) -> Result<Vec<SoftMask>> {
    Ok(discover_detailed(shot, cfg)?
        .into_iter()
        .map(|d| d.mask)
        .collect())
}

pub fn discover_detailed(shot: &VideoShot, cfg: &VideoPcaConfig) -> Result<Vec<DiscoveredMask>> {
    let model = fit_pca(shot, cfg)?;
    let (fw, fh) = shot.dims();
    let mut out = Vec::with_capacity(shot.len());
    for (frame, id) in shot.frames().iter().zip(shot.frame_ids()) {
        let err = reconstruction_error(&model, frame, cfg)?;
        let blurred = gaussian_blur(&err, cfg.blur_sigma);
        let init = binarize_blurred(&blurred, cfg.error_threshold);
        let small = work_frame(frame, cfg)?;
        let (soft, fallback) = match fit_color_models(&small, &init, cfg) {
            Ok(cm) => (classify_pixels(&small, &cm), false),
            Err(Error::DegenerateMask(why)) => {
                log::debug!("{id}: color model degenerate ({why}); using blurred residual");
                let max = blurred.max();
                let scaled = if max > 0.0 {
                    blurred.scaled(1.0 / max).unwrap_or(blurred.clone())
                } else {
                    blurred.clone()
                };
                (scaled, true)
            }
            Err(e) => return Err(e),
        };
        let prior = apply_center_prior(&soft, cfg.center_sigma);
        let mask = if prior.dims() == (fw, fh) {
            prior
        } else {
            prior.resize_bilinear(fw, fh)?
        };
        out.push(DiscoveredMask { mask, fallback });
    }
    Ok(out)
}
