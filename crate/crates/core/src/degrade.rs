//! Synthetic coarsening of fine mattes: box blur, binarization and
//! grayscale dilation / erosion, combined at random into paired
//! fine/coarse training data.

use std::path::Path;

use ndarray::{ArrayView1, ArrayViewMut1, Axis};

use crate::config::{parse_list, parse_pair, KeyValues};
use crate::error::{ensure_arg, Result};
use crate::imagery::{AlphaMatte, Mask, Quality, Rng};

/// Parameters of the random degradation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradeSpec {
    /// Odd box-filter sizes, one drawn uniformly per blur.
    pub blur_sizes: Vec<usize>,
    pub binarize_threshold: f64,
    /// Inclusive range of morphology radii in pixels.
    pub morph_radius: (usize, usize),
    pub p_binarize: f64,
    /// Probability of a morphology step; dilate and erode are then equally likely.
    pub p_morph: f64,
    pub p_blur: f64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        DegradeSpec {
            blur_sizes: vec![3, 5],
            binarize_threshold: 0.5,
            morph_radius: (1, 3),
            p_binarize: 0.5,
            p_morph: 0.5,
            p_blur: 1.0,
        }
    }
}

impl DegradeSpec {
    /// A spec that applies no operator.
    pub fn identity() -> Self {
        DegradeSpec {
            p_binarize: 0.0,
            p_morph: 0.0,
            p_blur: 0.0,
            ..DegradeSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_binarize", self.p_binarize),
            ("p_morph", self.p_morph),
            ("p_blur", self.p_blur),
        ] {
            ensure_arg!((0.0..=1.0).contains(&p), "{name} = {p} outside [0,1]");
        }
        ensure_arg!(!self.blur_sizes.is_empty(), "blur_sizes is empty");
        for &s in &self.blur_sizes {
            check_blur_size(s)?;
        }
        ensure_arg!(
            self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0,
            "binarize_threshold {} outside (0,1)",
            self.binarize_threshold
        );
        let (lo, hi) = self.morph_radius;
        ensure_arg!(lo >= 1 && lo <= hi, "morph_radius {lo}..={hi} must satisfy 1 <= lo <= hi");
        Ok(())
    }

    /// Reads `key<TAB>value` lines; absent keys keep their defaults.
    ///
    /// Keys: `blur_sizes` (comma list), `binarize_threshold`,
    /// `morph_radius` (`lo,hi`), `p_binarize`, `p_morph`, `p_blur`.
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let mut spec = DegradeSpec::default();
        kv.take_with("blur_sizes", &mut spec.blur_sizes, parse_list)?;
        kv.take("binarize_threshold", &mut spec.binarize_threshold)?;
        kv.take_with("morph_radius", &mut spec.morph_radius, parse_pair)?;
        kv.take("p_binarize", &mut spec.p_binarize)?;
        kv.take("p_morph", &mut spec.p_morph)?;
        kv.take("p_blur", &mut spec.p_blur)?;
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        DegradeSpec::from_kv(KeyValues::load(path)?)
    }

    pub fn to_text(&self) -> String {
        let sizes: Vec<String> = self.blur_sizes.iter().map(|s| s.to_string()).collect();
        format!(
            "blur_sizes\t{}\nbinarize_threshold\t{}\nmorph_radius\t{},{}\np_binarize\t{}\np_morph\t{}\np_blur\t{}\n",
            sizes.join(","),
            self.binarize_threshold,
            self.morph_radius.0,
            self.morph_radius.1,
            self.p_binarize,
            self.p_morph,
            self.p_blur
        )
    }
}

fn check_blur_size(size: usize) -> Result<()> {
    ensure_arg!(size >= 3 && size % 2 == 1, "blur size {size} must be odd and >= 3");
    Ok(())
}

/// Applies a sliding-window reduction along both axes with edge replication.
/// Square windows are separable for mean, max and min.
fn separable(mask: &Mask, radius: usize, reduce: impl Fn(ArrayView1<f64>, usize, ArrayViewMut1<f64>)) -> Mask {
    let mut data = mask.data().clone();
    for axis in [Axis(1), Axis(0)] {
        let src = data.clone();
        for (line, out) in src.lanes(axis).into_iter().zip(data.lanes_mut(axis)) {
            reduce(line, radius, out);
        }
    }
    Mask::from_clamped(data).expect("reductions keep values in [0,1]")
}

fn window(n: usize, i: usize, radius: usize) -> impl Iterator<Item = usize> {
    let r = radius as isize;
    (-r..=r).map(move |d| (i as isize + d).clamp(0, n as isize - 1) as usize)
}

/// Normalised `size`×`size` box filter with replicated borders.
pub fn blur(mask: &Mask, size: usize) -> Result<Mask> {
    check_blur_size(size)?;
    let norm = 1.0 / size as f64;
    Ok(separable(mask, size / 2, |line, r, mut out| {
        let n = line.len();
        for i in 0..n {
            out[i] = window(n, i, r).map(|j| line[j]).sum::<f64>() * norm;
        }
    }))
}

/// 1 where `value >= threshold`, else 0.
pub fn binarize(mask: &Mask, threshold: f64) -> Result<Mask> {
    ensure_arg!(threshold > 0.0 && threshold < 1.0, "threshold {threshold} outside (0,1)");
    Mask::new(mask.data().mapv(|v| if v >= threshold { 1.0 } else { 0.0 }))
}

fn check_radius(radius: usize) -> Result<()> {
    ensure_arg!(radius >= 1, "morphology radius must be positive");
    Ok(())
}

/// Grayscale max filter over a `(2r+1)`² square.
pub fn dilate(mask: &Mask, radius: usize) -> Result<Mask> {
    check_radius(radius)?;
    Ok(separable(mask, radius, |line, r, mut out| {
        let n = line.len();
        for i in 0..n {
            out[i] = window(n, i, r).map(|j| line[j]).fold(f64::NEG_INFINITY, f64::max);
        }
    }))
}

/// Grayscale min filter over a `(2r+1)`² square.
pub fn erode(mask: &Mask, radius: usize) -> Result<Mask> {
    check_radius(radius)?;
    Ok(separable(mask, radius, |line, r, mut out| {
        let n = line.len();
        for i in 0..n {
            out[i] = window(n, i, r).map(|j| line[j]).fold(f64::INFINITY, f64::min);
        }
    }))
}

/// One operator of a degradation run, in application order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DegradeOp {
    Binarize(f64),
    Dilate(usize),
    Erode(usize),
    Blur(usize),
}

impl DegradeOp {
    pub fn apply(self, mask: &Mask) -> Result<Mask> {
        match self {
            DegradeOp::Binarize(t) => binarize(mask, t),
            DegradeOp::Dilate(r) => dilate(mask, r),
            DegradeOp::Erode(r) => erode(mask, r),
            DegradeOp::Blur(s) => blur(mask, s),
        }
    }
}

/// Draws the operator sequence for one degradation.
///
/// Draw order: one uniform for binarize; one uniform for morphology, then
/// (if taken) a uniform coin for dilate vs. erode and a radius; one uniform
/// for blur, then (if taken) a size index.
pub fn draw_ops(spec: &DegradeSpec, rng: &mut Rng) -> Result<Vec<DegradeOp>> {
    spec.validate()?;
    let mut ops = Vec::with_capacity(3);
    if rng.chance(spec.p_binarize) {
        ops.push(DegradeOp::Binarize(spec.binarize_threshold));
    }
    if rng.chance(spec.p_morph) {
        let dilate = rng.chance(0.5);
        let (lo, hi) = spec.morph_radius;
        let r = lo + rng.below(hi - lo + 1);
        ops.push(if dilate { DegradeOp::Dilate(r) } else { DegradeOp::Erode(r) });
    }
    if rng.chance(spec.p_blur) {
        ops.push(DegradeOp::Blur(spec.blur_sizes[rng.below(spec.blur_sizes.len())]));
    }
    Ok(ops)
}

/// Applies a random binarize → morphology → blur subset to `mask`.
pub fn degrade(mask: &Mask, spec: &DegradeSpec, rng: &mut Rng) -> Result<Mask> {
    let mut out = mask.clone();
    for op in draw_ops(spec, rng)? {
        out = op.apply(&out)?;
    }
    Ok(out)
}

/// [`degrade`] for a fine matte, tagging the result as coarse.
pub fn degrade_matte(alpha: &AlphaMatte, spec: &DegradeSpec, rng: &mut Rng) -> Result<AlphaMatte> {
    if alpha.quality != Quality::Fine {
        log::warn!("degrading a matte that is already coarse");
    }
    Ok(AlphaMatte::new(degrade(&alpha.alpha, spec, rng)?, Quality::Coarse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    use ndarray::Array2;

    fn mean_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).mapv(f64::abs).mean().unwrap_or(0.0)
    }

    fn random_mask(h: usize, w: usize, rng: &mut Rng) -> Mask {
        Mask::from_fn(h, w, |_| rng.uniform()).unwrap()
    }

    fn naive_box(mask: &Mask, size: usize) -> Array2<f64> {
        let (h, w) = mask.size();
        let r = (size / 2) as isize;
        Array2::from_shape_fn((h, w), |(y, x)| {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    s += mask.data()[[yy, xx]];
                }
            }
            s / (size * size) as f64
        })
    }

    fn naive_order(mask: &Mask, radius: usize, max: bool) -> Array2<f64> {
        let (h, w) = mask.size();
        let r = radius as isize;
        Array2::from_shape_fn((h, w), |(y, x)| {
            let mut acc = if max { f64::NEG_INFINITY } else { f64::INFINITY };
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let v = mask.data()[[yy, xx]];
                    acc = if max { acc.max(v) } else { acc.min(v) };
                }
            }
            acc
        })
    }

    #[test]
    fn blur_constant_and_ones() {
        for v in [0.3, 1.0] {
            let m = Mask::filled(6, 7, v).unwrap();
            let b = blur(&m, 5).unwrap();
            assert!(b.data().iter().all(|&x| (x - v).abs() < 1e-15));
        }
    }

    #[test]
    fn blur_impulse() {
        let m = Mask::from_fn(5, 5, |(y, x)| if (y, x) == (2, 2) { 1.0 } else { 0.0 }).unwrap();
        let b = blur(&m, 3).unwrap();
        let oracle = naive_box(&m, 3);
        for y in 0..5 {
            for x in 0..5 {
                let expected = if (1..=3).contains(&y) && (1..=3).contains(&x) { 1.0 / 9.0 } else { 0.0 };
                assert!((oracle[[y, x]] - expected).abs() < 1e-15);
                assert!((b.data()[[y, x]] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn blur_matches_naive_on_random() {
        let mut rng = Rng::new(8);
        for size in [3, 5, 7] {
            let m = random_mask(9, 13, &mut rng);
            let diff = (blur(&m, size).unwrap().data() - &naive_box(&m, size))
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn blur_rejects_bad_sizes() {
        let m = Mask::filled(3, 3, 0.1).unwrap();
        for s in [0, 1, 2, 4] {
            assert!(blur(&m, s).is_err());
        }
    }

    #[test]
    fn blur_preserves_mean_in_interior() {
        // a blob well inside a zero border
        let m = Mask::from_fn(20, 20, |(y, x)| {
            if (6..14).contains(&y) && (5..15).contains(&x) { 0.8 } else { 0.0 }
        })
        .unwrap();
        assert!((blur(&m, 5).unwrap().mean() - m.mean()).abs() < 1e-6);
    }

    #[test]
    fn binarize_cases() {
        let m = Mask::new(ndarray::array![[0.3, 0.7, 0.5]]).unwrap();
        let b = binarize(&m, 0.5).unwrap();
        assert_eq!(b.data().as_slice().unwrap(), &[0.0, 1.0, 1.0]);
        assert!(binarize(&m, 0.0).is_err());
        assert!(binarize(&m, 1.0).is_err());
    }

    #[test]
    fn dilate_single_pixel() {
        let m = Mask::from_fn(5, 5, |(y, x)| if (y, x) == (2, 2) { 1.0 } else { 0.0 }).unwrap();
        let d = dilate(&m, 1).unwrap();
        assert_eq!(d.data(), &naive_order(&m, 1, true));
        let ones = d.data().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(ones, 9);
        assert_eq!(d.data()[[1, 1]], 1.0);
        assert_eq!(d.data()[[0, 0]], 0.0);
        assert!(dilate(&m, 0).is_err());
        assert!(erode(&m, 0).is_err());
    }

    #[test]
    fn erode_of_ones() {
        let m = Mask::filled(4, 6, 1.0).unwrap();
        assert_eq!(erode(&m, 2).unwrap(), m);
    }

    #[test]
    fn morphology_matches_naive() {
        let mut rng = Rng::new(21);
        for r in 1..4 {
            let m = random_mask(11, 8, &mut rng);
            assert_eq!(dilate(&m, r).unwrap().data(), &naive_order(&m, r, true));
            assert_eq!(erode(&m, r).unwrap().data(), &naive_order(&m, r, false));
        }
    }

    #[test]
    fn zero_probabilities_identity() {
        let mut rng = Rng::new(2);
        let m = random_mask(8, 8, &mut rng);
        assert_eq!(degrade(&m, &DegradeSpec::identity(), &mut rng).unwrap(), m);
    }

    #[test]
    fn degrade_is_deterministic() {
        let m = random_mask(16, 16, &mut Rng::new(1));
        let spec = DegradeSpec::default();
        let a = degrade(&m, &spec, &mut Rng::new(99)).unwrap();
        let b = degrade(&m, &spec, &mut Rng::new(99)).unwrap();
        assert_eq!(a, b);
    }

    fn soft_disk(n: usize) -> Mask {
        let c = (n as f64 - 1.0) / 2.0;
        Mask::from_fn(n, n, |(y, x)| {
            let d = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt();
            (1.0 - (d - 9.0) / 3.0).clamp(0.0, 1.0)
        })
        .unwrap()
    }

    #[test]
    fn degrade_replays_drawn_sequence() {
        let disk = soft_disk(32);
        let spec = DegradeSpec::default();
        let got = degrade(&disk, &spec, &mut Rng::new(7)).unwrap();

        // replay the documented draw order by hand
        let mut rng = Rng::new(7);
        let mut expected = disk.clone();
        if rng.uniform() < spec.p_binarize {
            expected = Mask::new(expected.data().mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 })).unwrap();
        }
        if rng.uniform() < spec.p_morph {
            let is_dilate = rng.uniform() < 0.5;
            let r = 1 + rng.below(3);
            expected = Mask::new(naive_order(&expected, r, is_dilate)).unwrap();
        }
        if rng.uniform() < spec.p_blur {
            let size = spec.blur_sizes[rng.below(2)];
            expected = Mask::new(naive_box(&expected, size)).unwrap();
        }
        let diff = mean_abs_diff(got.data(), expected.data());
        assert!(diff < 1e-12, "replay differs by {diff}");
        assert!(mean_abs_diff(got.data(), disk.data()) > 0.0);
    }

    #[test]
    fn spec_text_roundtrip_and_validation() {
        let spec = DegradeSpec {
            blur_sizes: vec![3],
            p_morph: 0.25,
            ..DegradeSpec::default()
        };
        let kv = KeyValues::parse(&spec.to_text(), Path::new("s")).unwrap();
        assert_eq!(DegradeSpec::from_kv(kv).unwrap(), spec);
        let kv = KeyValues::parse("p_blur\t1.5\n", Path::new("s")).unwrap();
        assert!(DegradeSpec::from_kv(kv).is_err());
        let kv = KeyValues::parse("blur_sizes\t4\n", Path::new("s")).unwrap();
        assert!(DegradeSpec::from_kv(kv).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn order_filters_bracket_identity(seed in 0u64..10_000, r in 1usize..4) {
            let m = random_mask(10, 9, &mut Rng::new(seed));
            let d = dilate(&m, r).unwrap();
            let e = erode(&m, r).unwrap();
            for ((&dv, &v), &ev) in d.data().iter().zip(m.data()).zip(e.data()) {
                prop_assert!(dv >= v && v >= ev);
            }
        }

        #[test]
        fn binarize_idempotent(seed in 0u64..10_000, t in 0.01f64..0.99) {
            let m = random_mask(7, 7, &mut Rng::new(seed));
            let once = binarize(&m, t).unwrap();
            prop_assert_eq!(binarize(&once, t).unwrap(), once);
        }
    }
}
