//! Forward and backward kernels on channel-first `(C, H, W)` activations.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayViewD, Axis};

/// Budget for one im2col block, in scalars.
const COL_BLOCK: usize = 1 << 15;

pub(crate) const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad` lies in `0..w`.
    fn valid_cols(&self, kx: usize, w: usize, wout: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let kx = kx as isize;
        let lo = ((p - kx).max(0) + s - 1) / s;
        let hi = ((w as isize - 1 + p - kx).div_euclid(s) + 1).clamp(0, wout as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    fn rows_per_block(&self, cin: usize, wout: usize) -> usize {
        (COL_BLOCK / (cin * self.k * self.k * wout).max(1)).max(1)
    }
}

fn im2col(x: &[f64], (cin, h, w): (usize, usize, usize), g: ConvGeom, rows: (usize, usize), wout: usize) -> Array2<f64> {
    let (r0, r1) = rows;
    let n = (r1 - r0) * wout;
    let k = g.k;
    let mut cols = Array2::zeros((cin * k * k, n));
    let dst_all = cols.as_slice_mut().expect("standard layout");
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut dst_all[row * n..(row + 1) * n];
                let (lo, hi) = g.valid_cols(kx, w, wout);
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    let drow = &mut dst[(oy - r0) * wout..(oy - r0 + 1) * wout];
                    if g.stride == 1 {
                        let off = lo + kx - g.pad;
                        drow[lo..hi].copy_from_slice(&src[off..off + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            drow[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &Array2<f64>, dx: &mut [f64], (cin, h, w): (usize, usize, usize), g: ConvGeom, rows: (usize, usize), wout: usize) {
    let (r0, r1) = rows;
    let n = (r1 - r0) * wout;
    let k = g.k;
    let src_all = cols.as_slice().expect("standard layout");
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &src_all[row * n..(row + 1) * n];
                let (lo, hi) = g.valid_cols(kx, w, wout);
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    let srow = &src[(oy - r0) * wout..(oy - r0 + 1) * wout];
                    for ox in lo..hi {
                        dx[base + ox * g.stride + kx - g.pad] += srow[ox];
                    }
                }
            }
        }
    }
}

fn weight_matrix<'a>(weight: &'a ArrayViewD<'a, f64>) -> ArrayView2<'a, f64> {
    let cout = weight.shape()[0];
    let kk: usize = weight.shape()[1..].iter().product();
    weight
        .view()
        .into_shape_with_order((cout, kk))
        .expect("contiguous kernel")
}

pub(crate) fn conv_forward(x: &Array3<f64>, weight: ArrayViewD<'_, f64>, bias: ArrayViewD<'_, f64>, g: ConvGeom) -> Array3<f64> {
    let dims = x.dim();
    let (cin, h, w) = dims;
    let cout = weight.shape()[0];
    debug_assert_eq!(weight.shape(), &[cout, cin, g.k, g.k]);
    let (hout, wout) = g.out_size(h, w);
    let xs = x.as_slice().expect("standard layout");
    let wm = weight_matrix(&weight);
    let bias = bias.as_slice().expect("contiguous bias");
    let mut out = Array3::zeros((cout, hout, wout));
    let step = g.rows_per_block(cin, wout);
    let mut r0 = 0;
    while r0 < hout {
        let r1 = (r0 + step).min(hout);
        let cols = im2col(xs, dims, g, (r0, r1), wout);
        let block = wm.dot(&cols);
        for (co, row) in block.outer_iter().enumerate() {
            let b = bias[co];
            let mut dst = out.slice_mut(s![co, r0..r1, ..]);
            let row = row.into_shape_with_order((r1 - r0, wout)).expect("block shape");
            ndarray::Zip::from(&mut dst).and(&row).for_each(|d, &v| *d = v + b);
        }
        r0 = r1;
    }
    out
}

/// Returns `(dx, dweight, dbias)`.
pub(crate) fn conv_backward(
    x: &Array3<f64>,
    weight: ArrayViewD<'_, f64>,
    dout: &Array3<f64>,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Array3<f64>>, Array2<f64>, Array1<f64>) {
    let dims = x.dim();
    let (cin, _, _) = dims;
    let (cout, hout, wout) = dout.dim();
    let xs = x.as_slice().expect("standard layout");
    let wm = weight_matrix(&weight);
    let mut dw = Array2::zeros(wm.raw_dim());
    let db = dout.sum_axis(Axis(2)).sum_axis(Axis(1));
    let mut dx = need_dx.then(|| Array3::zeros(dims));
    let step = g.rows_per_block(cin, wout);
    let mut r0 = 0;
    while r0 < hout {
        let r1 = (r0 + step).min(hout);
        let cols = im2col(xs, dims, g, (r0, r1), wout);
        let dblock = dout
            .slice(s![.., r0..r1, ..])
            .to_owned()
            .into_shape_with_order((cout, (r1 - r0) * wout))
            .expect("block shape");
        dw += &dblock.dot(&cols.t());
        if let Some(dx) = dx.as_mut() {
            let dcols = wm.t().dot(&dblock);
            col2im_add(&dcols, dx.as_slice_mut().expect("standard layout"), dims, g, (r0, r1), wout);
        }
        r0 = r1;
    }
    (dx, dw, db)
}

/// Per-group normalisation followed by a per-channel affine map.
/// Returns `(y, xhat, inv_std per group)`.
pub(crate) fn group_norm_forward(
    x: &Array3<f64>,
    gamma: &[f64],
    beta: &[f64],
    groups: usize,
) -> (Array3<f64>, Array3<f64>, Vec<f64>) {
    let (c, h, w) = x.dim();
    let per = c / groups;
    let plane = h * w;
    let n = (per * plane) as f64;
    let xs = x.as_slice().expect("standard layout");
    let mut xhat = Array3::zeros((c, h, w));
    let mut y = Array3::zeros((c, h, w));
    let mut inv_stds = Vec::with_capacity(groups);
    {
        let xh = xhat.as_slice_mut().expect("standard layout");
        let ys = y.as_slice_mut().expect("standard layout");
        for gi in 0..groups {
            let span = gi * per * plane..(gi + 1) * per * plane;
            let seg = &xs[span.clone()];
            let mean = seg.iter().sum::<f64>() / n;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / (var + NORM_EPS).sqrt();
            inv_stds.push(inv_std);
            for ch in gi * per..(gi + 1) * per {
                for i in ch * plane..(ch + 1) * plane {
                    let v = (xs[i] - mean) * inv_std;
                    xh[i] = v;
                    ys[i] = v * gamma[ch] + beta[ch];
                }
            }
        }
    }
    (y, xhat, inv_stds)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn group_norm_backward(
    xhat: &Array3<f64>,
    inv_stds: &[f64],
    gamma: &[f64],
    dy: &Array3<f64>,
) -> (Array3<f64>, Vec<f64>, Vec<f64>) {
    let (c, h, w) = xhat.dim();
    let groups = inv_stds.len();
    let per = c / groups;
    let plane = h * w;
    let n = (per * plane) as f64;
    let xh = xhat.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dx = Array3::zeros((c, h, w));
    let dxs = dx.as_slice_mut().expect("standard layout");
    for gi in 0..groups {
        let mut sum1 = 0.0;
        let mut sum2 = 0.0;
        for ch in gi * per..(gi + 1) * per {
            for i in ch * plane..(ch + 1) * plane {
                dgamma[ch] += dys[i] * xh[i];
                dbeta[ch] += dys[i];
                let dxh = dys[i] * gamma[ch];
                sum1 += dxh;
                sum2 += dxh * xh[i];
            }
        }
        let scale = inv_stds[gi] / n;
        for ch in gi * per..(gi + 1) * per {
            for i in ch * plane..(ch + 1) * plane {
                let dxh = dys[i] * gamma[ch];
                dxs[i] = scale * (n * dxh - sum1 - xh[i] * sum2);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ch, y, xx)| x[[ch, y / 2, xx / 2]])
}

pub(crate) fn upsample2_backward(dy: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = dy.dim();
    let mut dx = Array3::zeros((c, h2 / 2, w2 / 2));
    for ((ch, y, x), &v) in dy.indexed_iter() {
        dx[[ch, y / 2, x / 2]] += v;
    }
    dx
}

pub(crate) fn concat(parts: &[&Array3<f64>]) -> Array3<f64> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views)
        .expect("matching spatial sizes")
        .as_standard_layout()
        .into_owned()
}

/// Negative-side slope of the activation.
pub(crate) const LEAK: f64 = 0.1;

pub(crate) fn leaky_relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAK * v
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::Rng;
    use ndarray::{ArrayD, IxDyn};

    fn random3(shape: (usize, usize, usize), rng: &mut Rng) -> Array3<f64> {
        Array3::from_shape_simple_fn(shape, || rng.range(-1.0, 1.0))
    }

    fn naive_conv(x: &Array3<f64>, w: &ArrayD<f64>, b: &ArrayD<f64>, g: ConvGeom) -> Array3<f64> {
        let (cin, h, wd) = x.dim();
        let cout = w.shape()[0];
        let (ho, wo) = g.out_size(h, wd);
        Array3::from_shape_fn((cout, ho, wo), |(co, oy, ox)| {
            let mut acc = b[[co]];
            for ci in 0..cin {
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += w[[co, ci, ky, kx]] * x[[ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = Rng::new(0);
        for (g, h, w) in [
            (ConvGeom { k: 3, stride: 1, pad: 1 }, 7, 9),
            (ConvGeom { k: 3, stride: 2, pad: 1 }, 8, 10),
            (ConvGeom { k: 3, stride: 2, pad: 1 }, 7, 5),
            (ConvGeom { k: 1, stride: 1, pad: 0 }, 4, 6),
        ] {
            let x = random3((3, h, w), &mut rng);
            let wt = ArrayD::from_shape_simple_fn(IxDyn(&[4, 3, g.k, g.k]), || rng.normal());
            let b = ArrayD::from_shape_simple_fn(IxDyn(&[4]), || rng.normal());
            let fast = conv_forward(&x, wt.view(), b.view(), g);
            let slow = naive_conv(&x, &wt, &b, g);
            assert_eq!(fast.dim(), slow.dim());
            let err = (&fast - &slow).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(err < 1e-12, "{g:?}: {err}");
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), d> = <x, conv^T(d)> + <b, sum d> for the linear parts
        let mut rng = Rng::new(1);
        let g = ConvGeom { k: 3, stride: 2, pad: 1 };
        let x = random3((2, 9, 6), &mut rng);
        let wt = ArrayD::from_shape_simple_fn(IxDyn(&[3, 2, 3, 3]), || rng.normal());
        let zero_b = ArrayD::zeros(IxDyn(&[3]));
        let y = conv_forward(&x, wt.view(), zero_b.view(), g);
        let d = random3(y.dim(), &mut rng);
        let (dx, dw, _) = conv_backward(&x, wt.view(), &d, g, true);
        let lhs: f64 = (&y * &d).sum();
        let rhs: f64 = (&x * &dx.unwrap()).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let w2 = wt.view().into_shape_with_order((3, 18)).unwrap();
        let rhs_w: f64 = (&w2 * &dw).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn group_norm_normalises_groups() {
        let mut rng = Rng::new(2);
        let x = random3((8, 5, 5), &mut rng);
        let (y, _, _) = group_norm_forward(&x, &[1.0; 8], &[0.0; 8], 2);
        for g in 0..2 {
            let seg = y.slice(s![g * 4..(g + 1) * 4, .., ..]);
            assert!(seg.mean().unwrap().abs() < 1e-12);
            let var = seg.mapv(|v| v * v).mean().unwrap();
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let mut rng = Rng::new(3);
        let x = random3((2, 3, 4), &mut rng);
        let up = upsample2(&x);
        let d = random3(up.dim(), &mut rng);
        let lhs: f64 = (&up * &d).sum();
        let rhs: f64 = (&x * &upsample2_backward(&d)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
