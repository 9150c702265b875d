//! Gradient error: difference of Gaussian-derivative responses.

use ndarray::Array2;

use crate::error::{ensure_arg, ensure_shape, Result};
use crate::imagery::Mask;

/// Normalised 1-D Gaussian and its derivative, sampled on
/// `-r..=r` with `r = ceil(3 sigma)`. The 2-D filter `dG(x) G(y)` built
/// from them has unit L2 norm.
pub(crate) fn derivative_taps(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let r = (3.0 * sigma).ceil() as i64;
    let g: Vec<f64> = (-r..=r)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let dg: Vec<f64> = (-r..=r)
        .zip(&g)
        .map(|(t, g)| -(t as f64) / (sigma * sigma) * g)
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (ng, ndg) = (norm(&g), norm(&dg));
    (
        g.iter().map(|v| v / ng).collect(),
        dg.iter().map(|v| v / ndg).collect(),
    )
}

/// Correlates along rows (`horizontal`) or columns with edge replication.
fn correlate_1d(src: &Array2<f64>, taps: &[f64], horizontal: bool) -> Array2<f64> {
    let (h, w) = src.dim();
    let r = (taps.len() / 2) as isize;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        for (k, t) in taps.iter().enumerate() {
            let off = k as isize - r;
            let v = if horizontal {
                src[[y, (x as isize + off).clamp(0, w as isize - 1) as usize]]
            } else {
                src[[(y as isize + off).clamp(0, h as isize - 1) as usize, x]]
            };
            acc += t * v;
        }
        acc
    })
}

/// Mean over pixels of `|grad pred - grad gt|^q`, gradients taken with
/// first-order Gaussian-derivative filters of scale `sigma`.
pub fn gradient_error(pred: &Mask, gt: &Mask, sigma: f64, q: f64) -> Result<f64> {
    ensure_arg!(sigma > 0.0 && sigma.is_finite(), "sigma must be positive, got {sigma}");
    ensure_arg!(q > 0.0 && q.is_finite(), "q must be positive, got {q}");
    ensure_shape!(pred.size() == gt.size(), "pred {:?} vs gt {:?}", pred.size(), gt.size());
    let (g, dg) = derivative_taps(sigma);
    // Filtering is linear, so filter the difference once.
    let diff = pred.data() - gt.data();
    let dx = correlate_1d(&correlate_1d(&diff, &dg, true), &g, false);
    let dy = correlate_1d(&correlate_1d(&diff, &g, true), &dg, false);
    let n = diff.len() as f64;
    let total: f64 = dx
        .iter()
        .zip(dy.iter())
        .map(|(a, b)| (a * a + b * b).powf(q / 2.0))
        .sum();
    Ok(total / n)
}
