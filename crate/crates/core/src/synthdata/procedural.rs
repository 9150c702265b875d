//! Procedural stand-ins for human foregrounds and backgrounds so the whole
//! pipeline can be trained and tested without a photo corpus.
//!
//! A foreground is a soft-edged head-and-shoulders silhouette with thin
//! semi-transparent filament strokes around the head. Foreground colours are
//! saturated and backgrounds are desaturated low-frequency textures.

use ndarray::Array2;

use super::{Background, ForegroundSample, Split};
use crate::degrade::{blur, dilate, binarize};
use crate::error::Result;
use crate::imagery::{AlphaMatte, Image, Mask, Quality, Rng};

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    /// Approximate signed distance in pixels, negative inside.
    fn distance(&self, y: f64, x: f64) -> f64 {
        let ny = (y - self.cy) / self.ry;
        let nx = (x - self.cx) / self.rx;
        ((ny * ny + nx * nx).sqrt() - 1.0) * self.ry.min(self.rx)
    }

    fn coverage(&self, y: f64, x: f64, edge: f64) -> f64 {
        1.0 - smoothstep(-edge, edge, self.distance(y, x))
    }
}

fn saturated_color(rng: &mut Rng) -> [f64; 3] {
    let mut c = [rng.range(0.05, 0.35), rng.range(0.05, 0.35), rng.range(0.05, 0.35)];
    let hot = rng.below(3);
    c[hot] = rng.range(0.75, 0.98);
    c
}

fn muted_color(rng: &mut Rng) -> [f64; 3] {
    let base = rng.range(0.3, 0.7);
    [
        base + rng.range(-0.06, 0.06),
        base + rng.range(-0.06, 0.06),
        base + rng.range(-0.06, 0.06),
    ]
}

/// Distance from `(y, x)` to segment `a`–`b`.
fn segment_distance(y: f64, x: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 > 0.0 {
        (((y - a.0) * dy + (x - a.1) * dx) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (py, px) = (a.0 + t * dy, a.1 + t * dx);
    ((y - py).powi(2) + (x - px).powi(2)).sqrt()
}

/// Renders one fine-quality foreground of the given size.
pub fn procedural_foreground(id: &str, height: usize, width: usize, rng: &mut Rng) -> Result<ForegroundSample> {
    let (h, w) = (height as f64, width as f64);
    let head = Ellipse {
        cy: h * rng.range(0.3, 0.4),
        cx: w * rng.range(0.4, 0.6),
        ry: h * rng.range(0.15, 0.2),
        rx: w * rng.range(0.12, 0.17),
    };
    let body = Ellipse {
        cy: h * rng.range(0.95, 1.05),
        cx: head.cx + w * rng.range(-0.05, 0.05),
        ry: h * rng.range(0.35, 0.45),
        rx: w * rng.range(0.3, 0.42),
    };
    let edge = rng.range(0.6, 1.4);
    let neck = head.cy + head.ry * 0.8;

    let head_color = saturated_color(rng);
    let body_color = saturated_color(rng);
    let hair_color = saturated_color(rng);

    let mut alpha = Array2::from_shape_fn((height, width), |(y, x)| {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        head.coverage(yf, xf, edge).max(body.coverage(yf, xf, edge))
    });

    // filaments leave the upper half of the head boundary and curl outwards
    let strands = 6 + rng.below(9);
    let mut hair = Array2::<f64>::zeros((height, width));
    let scale = h.min(w);
    for _ in 0..strands {
        let theta = std::f64::consts::PI * rng.range(1.05, 1.95);
        let mut p = (head.cy + head.ry * theta.sin() * 0.95, head.cx + head.rx * theta.cos() * 0.95);
        let mut dir = theta + rng.range(-0.4, 0.4);
        let length = scale * rng.range(0.06, 0.16);
        let opacity = rng.range(0.35, 0.9);
        let width_px = rng.range(0.45, 0.9);
        let steps = 8;
        let bend = rng.range(-0.25, 0.25);
        for _ in 0..steps {
            let q = (p.0 + dir.sin() * length / steps as f64, p.1 + dir.cos() * length / steps as f64);
            let (y0, y1) = (p.0.min(q.0) - 2.0, p.0.max(q.0) + 2.0);
            let (x0, x1) = (p.1.min(q.1) - 2.0, p.1.max(q.1) + 2.0);
            for y in (y0.floor().max(0.0) as usize)..(y1.ceil().max(0.0) as usize).min(height) {
                for x in (x0.floor().max(0.0) as usize)..(x1.ceil().max(0.0) as usize).min(width) {
                    let d = segment_distance(y as f64 + 0.5, x as f64 + 0.5, p, q);
                    let cov = opacity * (1.0 - smoothstep(width_px * 0.5, width_px * 0.5 + 1.0, d));
                    hair[[y, x]] = hair[[y, x]].max(cov);
                }
            }
            p = q;
            dir += bend;
        }
    }
    ndarray::Zip::from(&mut alpha).and(&hair).for_each(|a, &hv| *a = a.max(hv));

    let fg = Image::from_fn(height, width, |y, x| {
        let yf = y as f64 + 0.5;
        let t = smoothstep(neck - 2.0, neck + 2.0, yf);
        let shade = 0.9 + 0.1 * (x as f64 / w);
        let hv = hair[[y, x]];
        let mut px = [0.0; 3];
        for c in 0..3 {
            let base = head_color[c] * (1.0 - t) + body_color[c] * t;
            px[c] = ((base * (1.0 - hv) + hair_color[c] * hv) * shade).clamp(0.0, 1.0);
        }
        px
    })?;

    Ok(ForegroundSample {
        id: id.to_string(),
        fg,
        alpha: AlphaMatte::new(Mask::from_clamped(alpha)?, Quality::Fine),
        split: Split::Train,
    })
}

/// A desaturated gradient with a low-frequency ripple.
pub fn procedural_background(height: usize, width: usize, rng: &mut Rng) -> Result<Image> {
    let a = muted_color(rng);
    let b = muted_color(rng);
    let angle = rng.range(0.0, std::f64::consts::TAU);
    let (dy, dx) = (angle.sin(), angle.cos());
    let freq = rng.range(1.0, 3.0);
    let phase = rng.range(0.0, std::f64::consts::TAU);
    let amp = rng.range(0.02, 0.08);
    let (h, w) = (height as f64, width as f64);
    Image::from_fn(height, width, |y, x| {
        let (u, v) = (y as f64 / h, x as f64 / w);
        let t = ((u - 0.5) * dy + (v - 0.5) * dx + 0.5).clamp(0.0, 1.0);
        let ripple = amp * (std::f64::consts::TAU * freq * (u * dx - v * dy) + phase).sin();
        let mut px = [0.0; 3];
        for c in 0..3 {
            px[c] = (a[c] * (1.0 - t) + b[c] * t + ripple).clamp(0.0, 1.0);
        }
        px
    })
}

/// Turns a fine matte into a coarse annotation: binarized, grown and smoothed,
/// with the filaments absorbed into the blob.
fn coarsen(alpha: &Mask) -> Result<Mask> {
    let radius = (alpha.height().min(alpha.width()) / 48).max(1);
    blur(&dilate(&binarize(alpha, 0.5)?, radius)?, 5)
}

/// Foregrounds and backgrounds of a procedural dataset.
#[derive(Debug, Clone)]
pub struct ProceduralCorpus {
    pub foregrounds: Vec<ForegroundSample>,
    pub backgrounds: Vec<Background>,
}

/// Builds `n_fine + n_coarse` foregrounds (ids `fine000`, `coarse000`, …)
/// and `n_backgrounds` backgrounds. The first `n_test` fine foregrounds are
/// assigned to the test split.
pub fn procedural_corpus(
    n_fine: usize,
    n_coarse: usize,
    n_test: usize,
    n_backgrounds: usize,
    (height, width): (usize, usize),
    rng: &Rng,
) -> Result<ProceduralCorpus> {
    let mut foregrounds = Vec::with_capacity(n_fine + n_coarse);
    for i in 0..n_fine {
        let mut r = rng.split(i as u64);
        let mut s = procedural_foreground(&format!("fine{i:03}"), height, width, &mut r)?;
        if i < n_test {
            s.split = Split::Test;
        }
        foregrounds.push(s);
    }
    for i in 0..n_coarse {
        let mut r = rng.split((1 << 32) + i as u64);
        let mut s = procedural_foreground(&format!("coarse{i:03}"), height, width, &mut r)?;
        s.alpha = AlphaMatte::new(coarsen(&s.alpha.alpha)?, Quality::Coarse);
        foregrounds.push(s);
    }
    let backgrounds = (0..n_backgrounds)
        .map(|i| {
            let mut r = rng.split((2 << 32) + i as u64);
            Ok(Background {
                name: format!("bg{i:03}"),
                source: None,
                image: procedural_background(height, width, &mut r)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ProceduralCorpus {
        foregrounds,
        backgrounds,
    })
}
