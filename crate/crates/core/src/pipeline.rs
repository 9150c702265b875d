//! End-to-end inference: image → coarse mask → unified mask → alpha and
//! foreground colour, plus refinement of externally supplied masks and
//! recompositing onto new backgrounds.

use std::fs;
use std::path::Path;

use ndarray::{s, Axis};

use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::imagery::{resize_chw, AlphaMatte, Image, Mask, Quality, Resize};
use crate::nets::{load_checkpoint, mpn_forward, mrn_forward, qun_forward, save_checkpoint, NetKind, NetParams};
use crate::synthdata::composite;

pub const BUNDLE_VERSION: &str = "coarsematte-bundle 1";
pub const BUNDLE_FILE: &str = "bundle.tsv";
/// Smallest accepted input side.
pub const MIN_INPUT: usize = 64;
/// Bounds of the working grid the networks run on.
pub const GRID_MIN: usize = 256;
pub const GRID_MAX: usize = 1024;

pub fn checkpoint_name(kind: NetKind) -> String {
    format!("{}.ckpt", kind.name())
}

/// The three trained networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub mpn: NetParams,
    pub qun: NetParams,
    pub mrn: NetParams,
    pub version: String,
}

impl ModelBundle {
    pub fn new(mpn: NetParams, qun: NetParams, mrn: NetParams) -> Result<Self> {
        for (p, kind) in [(&mpn, NetKind::Mpn), (&qun, NetKind::Qun), (&mrn, NetKind::Mrn)] {
            ensure_arg!(p.kind() == kind, "expected {kind} parameters, got {}", p.kind());
        }
        let gap = mrn.config().scale_gap;
        for p in [&mpn, &qun] {
            ensure_arg!(
                p.config().scale_gap == gap && p.config().low_res == mrn.config().low_res,
                "{} resolution {:?} disagrees with mrn {:?}",
                p.kind(),
                p.config().low_res,
                mrn.config().low_res
            );
        }
        Ok(ModelBundle {
            mpn,
            qun,
            mrn,
            version: BUNDLE_VERSION.to_string(),
        })
    }

    /// Working-grid sides must be multiples of this: the mask networks run
    /// at a quarter of the grid and the refinement network on the full grid.
    pub fn granularity(&self) -> usize {
        let gap = self.mrn.config().scale_gap;
        (gap * self.mpn.config().granularity())
            .max(gap * self.qun.config().granularity())
            .max(self.mrn.config().granularity())
    }

    pub fn scale_gap(&self) -> usize {
        self.mrn.config().scale_gap
    }

    /// Writes `bundle.tsv` and one checkpoint per network into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for p in [&self.mpn, &self.qun, &self.mrn] {
            save_checkpoint(p, dir.join(checkpoint_name(p.kind())))?;
        }
        let path = dir.join(BUNDLE_FILE);
        fs::write(&path, format!("version\t{}\n", self.version)).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(BUNDLE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let version = text
            .lines()
            .find_map(|l| l.strip_prefix("version\t"))
            .ok_or_else(|| Error::parse(&path, 1, "missing version line"))?;
        if version != BUNDLE_VERSION {
            return Err(Error::parse(&path, 1, format!("unsupported bundle version {version:?}")));
        }
        let load = |kind| load_checkpoint(dir.join(checkpoint_name(kind)), kind, None);
        ModelBundle::new(load(NetKind::Mpn)?, load(NetKind::Qun)?, load(NetKind::Mrn)?)
    }
}

/// Output of one inference.
#[derive(Debug, Clone, PartialEq)]
pub struct MatteResult {
    /// Alpha at the input resolution.
    pub alpha: AlphaMatte,
    /// Predicted foreground colour at the input resolution.
    pub fg_rgb: Image,
    /// MPN foreground mask at a quarter of the working grid.
    pub coarse_mask: Mask,
    /// QUN output at the same size.
    pub unified_mask: Mask,
}

fn grid_side(n: usize, m: usize) -> usize {
    let lo = GRID_MIN.div_ceil(m) * m;
    let hi = (GRID_MAX / m * m).max(lo);
    let nearest = ((n as f64 / m as f64).round() as usize).max(1) * m;
    nearest.clamp(lo, hi)
}

/// Working grid for an input of `size`: each side rounded to the nearest
/// multiple of `granularity` inside `[256, 1024]`.
pub fn working_grid(size: (usize, usize), granularity: usize) -> (usize, usize) {
    (grid_side(size.0, granularity), grid_side(size.1, granularity))
}

/// The input resized to the working grid and to a quarter of it.
struct Prepared {
    size: (usize, usize),
    work: Image,
    small: Image,
}

fn prepare(img: &Image, m: &ModelBundle) -> Result<Prepared> {
    let (h, w) = img.size();
    ensure_shape!(
        h >= MIN_INPUT && w >= MIN_INPUT,
        "input {h}x{w} is smaller than {MIN_INPUT}x{MIN_INPUT}"
    );
    let (gh, gw) = working_grid((h, w), m.granularity());
    let work = img.resize(gh, gw)?;
    let gap = m.scale_gap();
    let small = work.resize(gh / gap, gw / gap)?;
    Ok(Prepared { size: (h, w), work, small })
}

/// Foreground channel of the MPN output.
pub fn predict_coarse(mpn: &NetParams, small: &Image) -> Result<Mask> {
    let out = mpn_forward(mpn, small)?;
    Mask::from_clamped(out.index_axis_move(Axis(0), 0))
}

fn refine_prepared(p: Prepared, coarse: Mask, m: &ModelBundle) -> Result<MatteResult> {
    let unified = qun_forward(&m.qun, &p.small, &coarse)?;
    let out = mrn_forward(&m.mrn, &p.work, &unified)?;
    let out = resize_chw(&out, p.size.0, p.size.1)?;
    let fg_rgb = Image::from_clamped(out.slice(s![..3, .., ..]).permuted_axes([1, 2, 0]).to_owned())?;
    let alpha = Mask::from_clamped(out.index_axis_move(Axis(0), 3))?;
    Ok(MatteResult {
        alpha: AlphaMatte::new(alpha, Quality::Fine),
        fg_rgb,
        coarse_mask: coarse,
        unified_mask: unified,
    })
}

/// Predicts alpha and foreground colour from the image alone.
pub fn infer(img: &Image, m: &ModelBundle) -> Result<MatteResult> {
    let p = prepare(img, m)?;
    let coarse = predict_coarse(&m.mpn, &p.small)?;
    refine_prepared(p, coarse, m)
}

/// Refines a mask from elsewhere (an annotation or a segmentation output)
/// in place of the MPN prediction. The mask may have any size.
pub fn refine_external_mask(img: &Image, coarse: &Mask, m: &ModelBundle) -> Result<MatteResult> {
    if coarse.data().iter().all(|&v| v == 0.0) {
        log::warn!("external mask is empty; the result will mostly be background");
    }
    let p = prepare(img, m)?;
    let (h, w) = p.small.size();
    let coarse = coarse.resize(h, w)?;
    refine_prepared(p, coarse, m)
}

/// Composites the prediction over `bg`, resized to the result when needed.
/// The predicted foreground colour is used unless `input` supplies the
/// original image instead.
pub fn recomposite(r: &MatteResult, bg: &Image, input: Option<&Image>) -> Result<Image> {
    let (h, w) = r.alpha.size();
    let fg = input.unwrap_or(&r.fg_rgb);
    ensure_shape!(fg.size() == (h, w), "foreground {:?} vs alpha {:?}", fg.size(), (h, w));
    if bg.size() != (h, w) {
        log::info!("resizing background {:?} to {:?}", bg.size(), (h, w));
    }
    composite(fg, &r.alpha.alpha, &bg.resize(h, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::Rng;
    use crate::nets::{init_params, NetConfig};

    fn bundle(seed: u64) -> ModelBundle {
        let cfg = NetConfig::desk((16, 16));
        let mut rng = Rng::new(seed);
        ModelBundle::new(
            init_params(&cfg, NetKind::Mpn, &mut rng).unwrap(),
            init_params(&cfg, NetKind::Qun, &mut rng).unwrap(),
            init_params(&cfg, NetKind::Mrn, &mut rng).unwrap(),
        )
        .unwrap()
    }

    fn image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = Rng::new(seed);
        Image::from_fn(h, w, |_, _| [rng.uniform(), rng.uniform(), rng.uniform()]).unwrap()
    }

    #[test]
    fn grid_rounds_and_clamps() {
        assert_eq!(working_grid((768, 640), 64), (768, 640));
        assert_eq!(working_grid((800, 800), 64), (832, 832));
        assert_eq!(working_grid((800, 800), 16), (800, 800));
        assert_eq!(working_grid((64, 5000), 16), (256, 1024));
        assert_eq!(working_grid((300, 300), 48), (288, 288));
    }

    #[test]
    fn granularity_covers_all_nets() {
        let b = bundle(0);
        assert_eq!(b.granularity(), 16);
    }

    #[test]
    fn output_matches_input_size() {
        let b = bundle(1);
        for (h, w) in [(64, 64), (100, 77), (256, 256)] {
            let r = infer(&image(h, w, 2), &b).unwrap();
            assert_eq!(r.alpha.size(), (h, w));
            assert_eq!(r.fg_rgb.size(), (h, w));
            assert_eq!(r.coarse_mask.size(), r.unified_mask.size());
        }
    }

    #[test]
    fn too_small_input_is_rejected() {
        assert!(infer(&image(63, 80, 0), &bundle(0)).is_err());
    }

    #[test]
    fn refine_shares_the_infer_path() {
        let b = bundle(3);
        let img = image(96, 80, 4);
        let r = infer(&img, &b).unwrap();
        let again = refine_external_mask(&img, &r.coarse_mask, &b).unwrap();
        assert_eq!(r, again);
        assert_eq!(infer(&img, &b).unwrap(), r);
    }

    #[test]
    fn recomposite_extremes() {
        let b = bundle(5);
        let img = image(64, 64, 6);
        let mut r = infer(&img, &b).unwrap();
        let bg = image(64, 64, 7);
        r.alpha.alpha = Mask::filled(64, 64, 1.0).unwrap();
        assert_eq!(recomposite(&r, &bg, None).unwrap(), r.fg_rgb);
        assert_eq!(recomposite(&r, &bg, Some(&img)).unwrap(), img);
        r.alpha.alpha = Mask::filled(64, 64, 0.0).unwrap();
        assert_eq!(recomposite(&r, &bg, None).unwrap(), bg);
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = bundle(8);
        b.save(dir.path()).unwrap();
        let loaded = ModelBundle::load(dir.path()).unwrap();
        // Checkpoints hold f32 values.
        for (x, y) in [(&loaded.mpn, &b.mpn), (&loaded.qun, &b.qun), (&loaded.mrn, &b.mrn)] {
            assert_eq!(x.config(), y.config());
            for (p, q) in x.params().iter().zip(y.params().iter()) {
                assert_eq!(p.value, q.value.mapv(|v| f64::from(v as f32)));
            }
        }
        loaded.save(dir.path()).unwrap();
        assert_eq!(ModelBundle::load(dir.path()).unwrap(), loaded);
        fs::write(dir.path().join(BUNDLE_FILE), "version\tother\n").unwrap();
        assert!(ModelBundle::load(dir.path()).is_err());
    }

    #[test]
    fn bundle_rejects_swapped_networks() {
        let b = bundle(9);
        assert!(ModelBundle::new(b.qun.clone(), b.mpn.clone(), b.mrn.clone()).is_err());
    }
}
