//! Connectivity error over 4-connected threshold levels.

use std::collections::{BinaryHeap, VecDeque};

use ndarray::Array2;

use crate::error::{ensure_arg, ensure_shape, Result};
use crate::imagery::Mask;

/// Slack applied when testing `a >= t`, so 8-bit opaque pixels count as 1.
pub const OPAQUE_TOLERANCE: f64 = 1e-6;

const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn neighbours(y: usize, x: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    NEIGHBOURS.iter().filter_map(move |&(dy, dx)| {
        let (ny, nx) = (y as isize + dy, x as isize + dx);
        (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w).then_some((ny as usize, nx as usize))
    })
}

/// Largest 4-connected set of pixels where both mattes are fully opaque.
/// Ties go to the component met first in raster order.
pub(crate) fn opaque_core(pred: &Array2<f64>, gt: &Array2<f64>) -> Array2<bool> {
    let (h, w) = pred.dim();
    let opaque = |y: usize, x: usize| {
        pred[[y, x]] >= 1.0 - OPAQUE_TOLERANCE && gt[[y, x]] >= 1.0 - OPAQUE_TOLERANCE
    };
    let mut label = Array2::<usize>::zeros((h, w));
    let mut best = (0usize, 0usize);
    let mut next = 0;
    for y in 0..h {
        for x in 0..w {
            if label[[y, x]] != 0 || !opaque(y, x) {
                continue;
            }
            next += 1;
            label[[y, x]] = next;
            let mut size = 0;
            let mut queue = VecDeque::from([(y, x)]);
            while let Some((cy, cx)) = queue.pop_front() {
                size += 1;
                for (ny, nx) in neighbours(cy, cx, h, w) {
                    if label[[ny, nx]] == 0 && opaque(ny, nx) {
                        label[[ny, nx]] = next;
                        queue.push_back((ny, nx));
                    }
                }
            }
            if size > best.1 {
                best = (next, size);
            }
        }
    }
    label.mapv(|l| best.0 != 0 && l == best.0)
}

/// Threshold levels `0, step, 2 step, ...` up to and including 1.
pub(crate) fn levels(step: f64) -> Vec<f64> {
    let n = (1.0 / step + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

#[derive(PartialEq)]
struct Entry(f64, usize, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// For every pixel, the best achievable minimum of `a` along a
/// 4-connected path from the core to that pixel (both ends included).
fn bottleneck(a: &Array2<f64>, core: &Array2<bool>) -> Array2<f64> {
    let (h, w) = a.dim();
    let mut best = Array2::from_elem((h, w), f64::NEG_INFINITY);
    let mut heap = BinaryHeap::new();
    for ((y, x), &c) in core.indexed_iter() {
        if c {
            best[[y, x]] = a[[y, x]];
            heap.push(Entry(a[[y, x]], y, x));
        }
    }
    while let Some(Entry(v, y, x)) = heap.pop() {
        if v < best[[y, x]] {
            continue;
        }
        for (ny, nx) in neighbours(y, x, h, w) {
            let cand = v.min(a[[ny, nx]]);
            if cand > best[[ny, nx]] {
                best[[ny, nx]] = cand;
                heap.push(Entry(cand, ny, nx));
            }
        }
    }
    best
}

/// Per-pixel `phi = 1 - d` where `d = a - l` is kept only when `d >= theta`.
/// `l` is the highest level at which the pixel still reaches the core.
fn phi(a: &Array2<f64>, core: &Array2<bool>, levels: &[f64], theta: f64) -> Array2<f64> {
    let reach = bottleneck(a, core);
    Array2::from_shape_fn(a.dim(), |(y, x)| {
        let b = reach[[y, x]];
        let l = levels
            .iter()
            .copied()
            .filter(|&t| b >= t - OPAQUE_TOLERANCE)
            .fold(0.0, f64::max);
        let d = a[[y, x]] - l;
        1.0 - if d >= theta { d } else { 0.0 }
    })
}

/// Mean over pixels of `|phi_pred - phi_gt|`. When the mattes share no
/// fully opaque pixel the mean absolute difference is returned instead.
pub fn connectivity_error(pred: &Mask, gt: &Mask, theta: f64, step: f64) -> Result<f64> {
    ensure_arg!(theta > 0.0 && theta < 1.0, "theta must lie in (0,1), got {theta}");
    ensure_arg!(step > 0.0 && step < 1.0, "step must lie in (0,1), got {step}");
    ensure_shape!(pred.size() == gt.size(), "pred {:?} vs gt {:?}", pred.size(), gt.size());
    let (p, g) = (pred.data(), gt.data());
    let core = opaque_core(p, g);
    if !core.iter().any(|&c| c) {
        return Ok((p - g).mapv(f64::abs).mean().unwrap_or(0.0));
    }
    let lv = levels(step);
    let diff = phi(p, &core, &lv, theta) - phi(g, &core, &lv, theta);
    Ok(diff.mapv(f64::abs).mean().unwrap_or(0.0))
}
