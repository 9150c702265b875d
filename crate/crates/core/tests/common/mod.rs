//! Shared test helpers: finite-difference oracle and random fixtures.
#![allow(dead_code)]

use coarsematte::imagery::{Image, Mask, Rng};
use coarsematte::nets::{NetParams, ParamGrads};

pub fn random_image(h: usize, w: usize, rng: &mut Rng) -> Image {
    Image::from_fn(h, w, |_, _| [rng.uniform(), rng.uniform(), rng.uniform()]).unwrap()
}

pub fn random_mask(h: usize, w: usize, rng: &mut Rng) -> Mask {
    Mask::from_fn(h, w, |_| rng.uniform()).unwrap()
}

/// Replaces every zero-initialised array (biases, head) with small random
/// values so no gradient is trivially zero.
pub fn perturb_all(p: &mut NetParams, rng: &mut Rng) {
    for param in p.params_mut().iter_mut() {
        let scale = if param.name.contains("gamma") { 0.1 } else { 0.3 };
        let base = if param.name.contains("gamma") { 1.0 } else { 0.0 };
        if param.value.iter().all(|&v| v == 0.0 || v == 1.0) {
            param.value.mapv_inplace(|_| base + scale * rng.normal());
        }
    }
}

/// Central difference of `loss` with respect to flat parameter `index`.
pub fn central_difference(p: &mut NetParams, index: usize, step: f64, loss: &dyn Fn(&NetParams) -> f64) -> f64 {
    let orig = *p.params_mut().scalar_mut(index).unwrap();
    *p.params_mut().scalar_mut(index).unwrap() = orig + step;
    let up = loss(p);
    *p.params_mut().scalar_mut(index).unwrap() = orig - step;
    let down = loss(p);
    *p.params_mut().scalar_mut(index).unwrap() = orig;
    (up - down) / (2.0 * step)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-10 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// A coordinate is kink-free when halving the step leaves the central
/// difference unchanged; a ReLU or |x| corner within reach of the probe
/// shows up as a mismatch.
pub fn is_kink_free(p: &mut NetParams, index: usize, step: f64, loss: &dyn Fn(&NetParams) -> f64) -> Option<f64> {
    let full = central_difference(p, index, step, loss);
    let half = central_difference(p, index, step / 2.0, loss);
    let tol = 1e-10 + 1e-5 * full.abs().max(half.abs());
    ((full - half).abs() <= tol).then_some(full)
}

pub struct GradCheck {
    pub worst: f64,
    pub rejected: usize,
    pub points: Vec<(usize, f64, f64)>,
}

/// Checks `points` random kink-free coordinates and reports the worst
/// relative error.
pub fn check_points(
    p: &mut NetParams,
    grads: &ParamGrads,
    points: usize,
    step: f64,
    rng: &mut Rng,
    loss: &dyn Fn(&NetParams) -> f64,
) -> GradCheck {
    let n = p.params().count();
    let mut out = GradCheck { worst: 0.0, rejected: 0, points: Vec::new() };
    while out.points.len() < points {
        assert!(out.rejected < 10 * points, "too many kinked coordinates");
        let i = rng.below(n);
        let Some(num) = is_kink_free(p, i, step, loss) else {
            out.rejected += 1;
            continue;
        };
        let a = grads.scalar(i).unwrap();
        out.worst = out.worst.max(relative_error(a, num));
        out.points.push((i, a, num));
    }
    out
}

/// Writes a procedural dataset (one background per foreground) under
/// `dir` and returns its manifest.
pub fn procedural_dataset(
    dir: &std::path::Path,
    n_fine: usize,
    n_coarse: usize,
    n_test: usize,
    size: (usize, usize),
    seed: u64,
) -> coarsematte::synthdata::DatasetManifest {
    let rng = Rng::new(seed);
    let corpus = coarsematte::synthdata::procedural_corpus(n_fine, n_coarse, n_test, n_fine + n_coarse, size, &rng).unwrap();
    coarsematte::synthdata::build_dataset(&corpus.foregrounds, &corpus.backgrounds, 1, &rng.split(99), dir).unwrap()
}
