//! Alpha compositing and dataset synthesis: every foreground is pasted
//! onto several backgrounds and the results are indexed in a manifest.

mod folders;
mod manifest;
mod procedural;

pub use folders::{list_pngs, load_backgrounds, load_foregrounds, save_corpus, COARSE_DIR, FINE_DIR, TEST_DIR};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, ManifestRecord, Split};
pub use procedural::{procedural_background, procedural_corpus, procedural_foreground, ProceduralCorpus};

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Zip;
use rayon::prelude::*;

use crate::error::{ensure_arg, ensure_shape, Error, Result};
use crate::imagery::{save_image, save_mask, AlphaMatte, Image, Mask, Quality, Resize, Rng};

/// A foreground layer and its matte, ready to be composited.
#[derive(Debug, Clone)]
pub struct ForegroundSample {
    pub id: String,
    pub fg: Image,
    pub alpha: AlphaMatte,
    pub split: Split,
}

impl ForegroundSample {
    pub fn quality(&self) -> Quality {
        self.alpha.quality
    }
}

/// A background image, optionally remembering the file it came from.
#[derive(Debug, Clone)]
pub struct Background {
    pub name: String,
    pub source: Option<PathBuf>,
    pub image: Image,
}

/// `alpha * fg + (1 - alpha) * bg`, per pixel and channel.
pub fn composite(fg: &Image, alpha: &Mask, bg: &Image) -> Result<Image> {
    ensure_shape!(
        fg.size() == alpha.size() && fg.size() == bg.size(),
        "composite needs equal sizes: fg {:?}, alpha {:?}, bg {:?}",
        fg.size(),
        alpha.size(),
        bg.size()
    );
    let mut out = bg.data().clone();
    let a = alpha.data();
    Zip::indexed(&mut out)
        .and(fg.data())
        .for_each(|(y, x, _), o, &f| {
            let a = a[[y, x]];
            *o = a * f + (1.0 - a) * *o;
        });
    Image::from_clamped(out)
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn check_name(name: &str) -> Result<()> {
    ensure_arg!(
        !name.is_empty() && !name.contains(['\t', '\n', '/', '\\']),
        "sample name {name:?} must be non-empty without tabs, newlines or separators"
    );
    Ok(())
}

/// Composites each foreground onto `k` backgrounds and writes
/// `out_dir/{composite,alpha,fg}/<id>_<bgidx>.png` plus `out_dir/manifest.tsv`.
///
/// Backgrounds are drawn without replacement per foreground whenever at
/// least `k` exist, and are resized to the foreground size. Backgrounds with
/// no source file are written under `out_dir/bg/`.
pub fn build_dataset(
    foregrounds: &[ForegroundSample],
    backgrounds: &[Background],
    k: usize,
    rng: &Rng,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    ensure_arg!(k >= 1, "backgrounds per foreground must be at least 1");
    ensure_arg!(!foregrounds.is_empty(), "no foregrounds given");
    ensure_arg!(!backgrounds.is_empty(), "no backgrounds given");
    for fg in foregrounds {
        check_name(&fg.id)?;
        ensure_shape!(
            fg.fg.size() == fg.alpha.size(),
            "foreground {} has image {:?} but alpha {:?}",
            fg.id,
            fg.fg.size(),
            fg.alpha.size()
        );
    }
    for sub in ["composite", "alpha", "fg"] {
        ensure_dir(&out_dir.join(sub))?;
    }

    let mut bg_paths = Vec::with_capacity(backgrounds.len());
    for bg in backgrounds {
        check_name(&bg.name)?;
        let path = match &bg.source {
            Some(src) => fs::canonicalize(src)
                .map_err(|e| Error::io(src, e))?
                .to_string_lossy()
                .into_owned(),
            None => {
                ensure_dir(&out_dir.join("bg"))?;
                let rel = format!("bg/{}.png", bg.name);
                save_image(&bg.image, out_dir.join(&rel))?;
                rel
            }
        };
        bg_paths.push(path);
    }

    let jobs: Vec<(usize, usize)> = foregrounds
        .iter()
        .enumerate()
        .flat_map(|(i, _)| {
            let mut local = rng.split(i as u64);
            local
                .sample_indices(backgrounds.len(), k)
                .into_iter()
                .map(move |b| (i, b))
        })
        .collect();

    let records = jobs
        .par_iter()
        .map(|&(i, b)| {
            let sample = &foregrounds[i];
            let (h, w) = sample.fg.size();
            let bg = backgrounds[b].image.resize(h, w)?;
            let comp = composite(&sample.fg, &sample.alpha.alpha, &bg)?;
            let stem = format!("{}_{}", sample.id, b);
            let record = ManifestRecord {
                composite: format!("composite/{stem}.png"),
                alpha: format!("alpha/{stem}.png"),
                fg: format!("fg/{stem}.png"),
                bg: bg_paths[b].clone(),
                quality: sample.quality(),
                split: sample.split,
            };
            save_image(&comp, out_dir.join(&record.composite))?;
            save_mask(&sample.alpha.alpha, out_dir.join(&record.alpha))?;
            save_image(&sample.fg, out_dir.join(&record.fg))?;
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = DatasetManifest::new(records);
    manifest.root = out_dir.to_path_buf();
    save_manifest(&manifest, out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::{load_image, load_mask};

    fn random_image(h: usize, w: usize, rng: &mut Rng) -> Image {
        Image::from_fn(h, w, |_, _| [rng.uniform(), rng.uniform(), rng.uniform()]).unwrap()
    }

    #[test]
    fn compositing_identities() {
        let mut rng = Rng::new(1);
        let f = random_image(5, 4, &mut rng);
        let b = random_image(5, 4, &mut rng);
        assert_eq!(composite(&f, &Mask::filled(5, 4, 1.0).unwrap(), &b).unwrap(), f);
        assert_eq!(composite(&f, &Mask::filled(5, 4, 0.0).unwrap(), &b).unwrap(), b);
        let half = composite(
            &Image::filled(2, 2, [1.0; 3]).unwrap(),
            &Mask::filled(2, 2, 0.5).unwrap(),
            &Image::filled(2, 2, [0.0; 3]).unwrap(),
        )
        .unwrap();
        assert!(half.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn composite_rejects_mismatch() {
        let f = Image::filled(4, 4, [0.1; 3]).unwrap();
        let b = Image::filled(4, 5, [0.1; 3]).unwrap();
        assert!(composite(&f, &Mask::filled(4, 4, 0.3).unwrap(), &b).is_err());
    }

    fn fg_sample(id: &str, rng: &mut Rng) -> ForegroundSample {
        ForegroundSample {
            id: id.into(),
            fg: random_image(6, 5, rng),
            alpha: AlphaMatte::new(Mask::from_fn(6, 5, |_| rng.uniform()).unwrap(), Quality::Fine),
            split: Split::Train,
        }
    }

    #[test]
    fn record_count_is_product() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(2);
        let fgs: Vec<_> = (0..3).map(|i| fg_sample(&format!("p{i}"), &mut rng)).collect();
        let bgs: Vec<_> = (0..4)
            .map(|i| Background {
                name: format!("b{i}"),
                source: None,
                image: random_image(9, 7, &mut rng),
            })
            .collect();
        let m = build_dataset(&fgs, &bgs, 2, &Rng::new(0), dir.path()).unwrap();
        assert_eq!(m.records.len(), 6);
        // two distinct backgrounds per foreground
        for chunk in m.records.chunks(2) {
            assert_ne!(chunk[0].bg, chunk[1].bg);
        }
        let loaded = load_manifest(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(loaded.records, m.records);
    }

    #[test]
    fn single_record_matches_composite() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(4);
        let fg = fg_sample("solo", &mut rng);
        let bg = Background {
            name: "b".into(),
            source: None,
            image: random_image(6, 5, &mut rng),
        };
        let m = build_dataset(std::slice::from_ref(&fg), std::slice::from_ref(&bg), 1, &rng, dir.path())
            .unwrap();
        assert_eq!(m.records.len(), 1);
        let expected = composite(&fg.fg, &fg.alpha.alpha, &bg.image).unwrap();
        let rec = &m.records[0];
        let stored = load_image(dir.path().join(&rec.composite)).unwrap().image;
        let err = (stored.data() - expected.data()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err <= 0.5 / 255.0 + 1e-9);
        let alpha = load_mask(dir.path().join(&rec.alpha)).unwrap();
        assert_eq!(alpha.size(), (6, 5));
    }

    #[test]
    fn empty_inputs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(4);
        let fg = fg_sample("a", &mut rng);
        assert!(build_dataset(&[], &[], 1, &rng, dir.path()).is_err());
        let bg = Background {
            name: "b".into(),
            source: None,
            image: random_image(6, 5, &mut rng),
        };
        assert!(build_dataset(std::slice::from_ref(&fg), &[], 1, &rng, dir.path()).is_err());
        assert!(build_dataset(&[fg], &[bg], 0, &rng, dir.path()).is_err());
    }
}
