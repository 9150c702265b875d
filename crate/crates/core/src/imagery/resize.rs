use ndarray::{Array2, Array3, ArrayView2, Axis};

use super::{AlphaMatte, Image, Mask};
use crate::error::{ensure_arg, Result};

/// Source index pair and weight of the second sample for every output
/// coordinate along one axis, using half-pixel centred sampling.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling of a single plane. Equal sizes return a copy.
pub fn resize_plane(src: ArrayView2<'_, f64>, height: usize, width: usize) -> Result<Array2<f64>> {
    ensure_arg!(height >= 1 && width >= 1, "target size {height}x{width} must be positive");
    let (sh, sw) = src.dim();
    ensure_arg!(sh >= 1 && sw >= 1, "cannot resize an empty plane");
    if (sh, sw) == (height, width) {
        return Ok(src.to_owned());
    }
    let rows = axis_taps(sh, height);
    let cols = axis_taps(sw, width);
    let mut out = Array2::zeros((height, width));
    for (y, &(r0, r1, fy)) in rows.iter().enumerate() {
        for (x, &(c0, c1, fx)) in cols.iter().enumerate() {
            let top = src[[r0, c0]] * (1.0 - fx) + src[[r0, c1]] * fx;
            let bottom = src[[r1, c0]] * (1.0 - fx) + src[[r1, c1]] * fx;
            out[[y, x]] = top * (1.0 - fy) + bottom * fy;
        }
    }
    Ok(out)
}

/// Bilinear resize of images and mattes.
pub trait Resize: Sized {
    fn resize(&self, height: usize, width: usize) -> Result<Self>;
}

impl Resize for Mask {
    fn resize(&self, height: usize, width: usize) -> Result<Self> {
        Mask::from_clamped(resize_plane(self.data().view(), height, width)?)
    }
}

impl Resize for AlphaMatte {
    fn resize(&self, height: usize, width: usize) -> Result<Self> {
        Ok(AlphaMatte::new(self.alpha.resize(height, width)?, self.quality))
    }
}

impl Resize for Image {
    fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if self.size() == (height, width) {
            return Ok(self.clone());
        }
        let mut out = Array3::zeros((height, width, 3));
        for c in 0..3 {
            let plane = resize_plane(self.channel(c), height, width)?;
            out.index_axis_mut(Axis(2), c).assign(&plane);
        }
        Image::from_clamped(out)
    }
}

/// Resizes a channel-first stack plane by plane.
pub(crate) fn resize_chw(src: &Array3<f64>, height: usize, width: usize) -> Result<Array3<f64>> {
    let mut out = Array3::zeros((src.dim().0, height, width));
    for (c, plane) in src.outer_iter().enumerate() {
        out.index_axis_mut(Axis(0), c)
            .assign(&resize_plane(plane, height, width)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::Rng;
    use ndarray::array;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn constant_stays_constant() {
        let m = Mask::filled(5, 7, 0.5).unwrap();
        for (h, w) in [(1, 1), (3, 11), (20, 4), (5, 7)] {
            let r = m.resize(h, w).unwrap();
            assert!(r.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn identity_size_is_bitwise_equal() {
        let mut rng = Rng::new(3);
        let img = Image::from_fn(6, 9, |_, _| [rng.uniform(), rng.uniform(), rng.uniform()]).unwrap();
        assert_eq!(img.resize(6, 9).unwrap(), img);
    }

    #[test]
    fn two_by_two_upsample_matches_hand_weights() {
        // output x=1 samples source 0.25, x=2 samples 0.75; the ends clamp
        let m = Mask::new(array![[0.0, 1.0], [0.0, 1.0]]).unwrap();
        let r = m.resize(2, 4).unwrap();
        let expected = [0.0, 0.25, 0.75, 1.0];
        for y in 0..2 {
            for x in 0..4 {
                assert!((r.data()[[y, x]] - expected[x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_zero_target() {
        let m = Mask::filled(2, 2, 0.1).unwrap();
        assert!(m.resize(0, 3).is_err());
        assert!(m.resize(3, 0).is_err());
    }

    proptest! {
        #[test]
        fn output_stays_within_input_range(
            seed in 0u64..1000, h in 1usize..12, w in 1usize..12, th in 1usize..20, tw in 1usize..20
        ) {
            let mut rng = Rng::new(seed);
            let m = Mask::from_fn(h, w, |_| rng.uniform()).unwrap();
            let lo = m.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = m.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let r = m.resize(th, tw).unwrap();
            for &v in r.data() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
