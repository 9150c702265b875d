//! L1 training objectives for the three networks.
//!
//! Every `|a - b|₁` term is reduced as the mean absolute difference over its
//! elements, so the weights mix terms independently of resolution. The
//! derivative of `|·|` at zero is taken as zero. The `*_grad` variants return
//! the loss together with its gradient with respect to the predictions.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Zip};

use crate::error::{ensure_arg, ensure_shape, Result};
use crate::imagery::{Image, Mask};

/// Term weights of the three objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Foreground weight of the mask prediction loss; background gets `1 - λ`.
    pub lambda_l: f64,
    /// Identity weight of the unification loss.
    pub lambda_1: f64,
    /// Consistency weight of the unification loss.
    pub lambda_2: f64,
    /// RGB weight of the refinement loss; alpha gets `1 - λ`.
    pub lambda_h: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_l: 0.5,
            lambda_1: 0.25,
            lambda_2: 0.5,
            lambda_h: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("lambda_l", self.lambda_l),
            ("lambda_1", self.lambda_1),
            ("lambda_2", self.lambda_2),
            ("lambda_h", self.lambda_h),
        ] {
            ensure_arg!((0.0..=1.0).contains(&v), "{n} = {v} outside [0,1]");
        }
        Ok(())
    }
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference of two equally shaped planes.
pub fn mean_abs(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    ensure_shape!(a.dim() == b.dim(), "L1 operands {:?} and {:?}", a.dim(), b.dim());
    let n = a.len() as f64;
    Ok(Zip::from(&a).and(&b).fold(0.0, |acc, &x, &y| acc + (x - y).abs()) / n)
}

/// Gradient of `scale * mean|a - b|` with respect to `a`, added into `out`.
fn add_mean_abs_grad(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, scale: f64, mut out: ndarray::ArrayViewMut2<'_, f64>) {
    let k = scale / a.len() as f64;
    Zip::from(&mut out).and(&a).and(&b).for_each(|o, &x, &y| *o += k * sign(x - y));
}

fn mean_abs3(a: ArrayView3<'_, f64>, b: ArrayView3<'_, f64>) -> f64 {
    let n = a.len() as f64;
    Zip::from(&a).and(&b).fold(0.0, |acc, &x, &y| acc + (x - y).abs()) / n
}

fn check_pred(pred: &Array3<f64>, channels: usize, (h, w): (usize, usize), what: &str) -> Result<()> {
    ensure_shape!(
        pred.dim() == (channels, h, w),
        "{what} prediction {:?} must be ({channels}, {h}, {w})",
        pred.dim()
    );
    Ok(())
}

/// `λ_L·mean|fg_p − fg_g| + (1−λ_L)·mean|bg_p − bg_g|` for a `(2, H, W)` prediction.
pub fn mpn_loss(pred: &Array3<f64>, gt_fg: &Mask, gt_bg: &Mask, w: &LossWeights) -> Result<f64> {
    Ok(mpn_loss_grad(pred, gt_fg, gt_bg, w)?.0)
}

pub fn mpn_loss_grad(pred: &Array3<f64>, gt_fg: &Mask, gt_bg: &Mask, w: &LossWeights) -> Result<(f64, Array3<f64>)> {
    ensure_shape!(gt_fg.size() == gt_bg.size(), "fg {:?} and bg {:?} targets differ", gt_fg.size(), gt_bg.size());
    check_pred(pred, 2, gt_fg.size(), "MPN")?;
    let fg = pred.slice(s![0, .., ..]);
    let bg = pred.slice(s![1, .., ..]);
    let loss = w.lambda_l * mean_abs(fg, gt_fg.data().view())?
        + (1.0 - w.lambda_l) * mean_abs(bg, gt_bg.data().view())?;
    let mut grad = Array3::zeros(pred.dim());
    add_mean_abs_grad(fg, gt_fg.data().view(), w.lambda_l, grad.slice_mut(s![0, .., ..]));
    add_mean_abs_grad(bg, gt_bg.data().view(), 1.0 - w.lambda_l, grad.slice_mut(s![1, .., ..]));
    Ok((loss, grad))
}

/// `mean|Q(x) − x_mask| + mean|Q(x′) − x′_mask|`, comparing each output with
/// the mask channel of its input.
pub fn qun_identity_loss(qx: &Array2<f64>, x_mask: &Array2<f64>, qx2: &Array2<f64>, x2_mask: &Array2<f64>) -> Result<f64> {
    Ok(mean_abs(qx.view(), x_mask.view())? + mean_abs(qx2.view(), x2_mask.view())?)
}

/// `mean|Q(x) − Q(x′)|`.
pub fn qun_consistency_loss(qx: &Array2<f64>, qx2: &Array2<f64>) -> Result<f64> {
    mean_abs(qx.view(), qx2.view())
}

/// `λ_1·identity + λ_2·consistency`.
pub fn qun_loss(qx: &Array2<f64>, x_mask: &Array2<f64>, qx2: &Array2<f64>, x2_mask: &Array2<f64>, w: &LossWeights) -> Result<f64> {
    Ok(w.lambda_1 * qun_identity_loss(qx, x_mask, qx2, x2_mask)? + w.lambda_2 * qun_consistency_loss(qx, qx2)?)
}

/// Loss plus gradients with respect to `qx` and `qx2`.
pub fn qun_loss_grad(
    qx: &Array2<f64>,
    x_mask: &Array2<f64>,
    qx2: &Array2<f64>,
    x2_mask: &Array2<f64>,
    w: &LossWeights,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let loss = qun_loss(qx, x_mask, qx2, x2_mask, w)?;
    let mut g1 = Array2::zeros(qx.dim());
    let mut g2 = Array2::zeros(qx2.dim());
    add_mean_abs_grad(qx.view(), x_mask.view(), w.lambda_1, g1.view_mut());
    add_mean_abs_grad(qx2.view(), x2_mask.view(), w.lambda_1, g2.view_mut());
    add_mean_abs_grad(qx.view(), qx2.view(), w.lambda_2, g1.view_mut());
    add_mean_abs_grad(qx2.view(), qx.view(), w.lambda_2, g2.view_mut());
    Ok((loss, g1, g2))
}

/// `λ_H·mean|RGB_p − RGB_g| + (1−λ_H)·mean|α_p − α_g|` for a `(4, H, W)` prediction.
pub fn mrn_loss(pred: &Array3<f64>, gt_rgb: &Image, gt_alpha: &Mask, w: &LossWeights) -> Result<f64> {
    Ok(mrn_loss_grad(pred, gt_rgb, gt_alpha, w)?.0)
}

pub fn mrn_loss_grad(pred: &Array3<f64>, gt_rgb: &Image, gt_alpha: &Mask, w: &LossWeights) -> Result<(f64, Array3<f64>)> {
    ensure_shape!(gt_rgb.size() == gt_alpha.size(), "rgb {:?} and alpha {:?} targets differ", gt_rgb.size(), gt_alpha.size());
    check_pred(pred, 4, gt_alpha.size(), "MRN")?;
    let rgb_gt = gt_rgb.to_chw();
    let rgb = pred.slice(s![..3, .., ..]);
    let alpha = pred.slice(s![3, .., ..]);
    let loss = w.lambda_h * mean_abs3(rgb, rgb_gt.view()) + (1.0 - w.lambda_h) * mean_abs(alpha, gt_alpha.data().view())?;
    let mut grad = Array3::zeros(pred.dim());
    let k = w.lambda_h / rgb.len() as f64;
    Zip::from(grad.slice_mut(s![..3, .., ..]))
        .and(&rgb)
        .and(&rgb_gt)
        .for_each(|g, &p, &t| *g = k * sign(p - t));
    add_mean_abs_grad(alpha, gt_alpha.data().view(), 1.0 - w.lambda_h, grad.slice_mut(s![3, .., ..]));
    Ok((loss, grad))
}
