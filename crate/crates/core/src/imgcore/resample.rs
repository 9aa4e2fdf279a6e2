/// A rectangle in source pixel-center coordinates; the corners map onto the
/// corner pixels of the output grid (align-corners sampling).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Window {
    pub fn full(width: usize, height: usize) -> Window {
        Window {
            x0: 0.0,
            y0: 0.0,
            x1: (width - 1) as f64,
            y1: (height - 1) as f64,
        }
    }

    /// The pixel block starting at `(x, y)` of size `w`x`h`.
    pub fn pixels(x: usize, y: usize, w: usize, h: usize) -> Window {
        Window {
            x0: x as f64,
            y0: y as f64,
            x1: (x + w - 1) as f64,
            y1: (y + h - 1) as f64,
        }
    }

    /// Re-expresses this window, given for an image of `from` size, in the
    /// coordinates of an image of `to` size covering the same field of view.
    pub fn rescale(&self, from: (usize, usize), to: (usize, usize)) -> Window {
        let sx = ratio(from.0, to.0);
        let sy = ratio(from.1, to.1);
        Window {
            x0: self.x0 * sx,
            y0: self.y0 * sy,
            x1: self.x1 * sx,
            y1: self.y1 * sy,
        }
    }
}

fn ratio(from: usize, to: usize) -> f64 {
    if from <= 1 {
        0.0
    } else {
        (to - 1) as f64 / (from - 1) as f64
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn coords(lo: f64, hi: f64, n_out: usize, n_in: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let c = if n_out == 1 {
                (lo + hi) / 2.0
            } else {
                lo + (hi - lo) * i as f64 / (n_out - 1) as f64
            };
            let c = c.clamp(0.0, (n_in - 1) as f64);
            let i0 = (c.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, c - i0 as f64)
        })
        .collect()
}

pub(super) fn resample(
    src: &[f64],
    w: usize,
    h: usize,
    ch: usize,
    window: Window,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let xs = coords(window.x0, window.x1, out_w, w);
    let ys = coords(window.y0, window.y1, out_h, h);
    let mut out = Vec::with_capacity(out_w * out_h * ch);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for c in 0..ch {
                let p = |x: usize, y: usize| src[(y * w + x) * ch + c];
                let top = lerp(p(x0, y0), p(x1, y0), tx);
                let bottom = lerp(p(x0, y1), p(x1, y1), tx);
                out.push(lerp(top, bottom, ty).clamp(0.0, 1.0));
            }
        }
    }
    out
}
