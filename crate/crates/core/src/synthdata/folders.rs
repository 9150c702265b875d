//! Reading foreground and background collections from directories, and
//! writing procedural ones in the same layout.
//!
//! A foreground directory holds RGBA PNGs whose alpha channel is the matte,
//! sorted into `fine/`, `coarse/` and `test/` (fine, held out). When none of
//! these exist, every PNG directly inside the directory is a fine training
//! foreground.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{Background, ForegroundSample, ProceduralCorpus, Split};
use crate::error::{Error, Result};
use crate::imagery::{load_image, save_image, save_rgba, AlphaMatte, Quality};

pub const FINE_DIR: &str = "fine";
pub const COARSE_DIR: &str = "coarse";
pub const TEST_DIR: &str = "test";

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_group(dir: &Path, quality: Quality, split: Split, prefix: &str) -> Result<Vec<ForegroundSample>> {
    list_pngs(dir)?
        .par_iter()
        .map(|path| {
            let loaded = load_image(path)?;
            let alpha = loaded.alpha.ok_or_else(|| Error::Decode {
                path: path.clone(),
                message: "foreground has no alpha channel".into(),
            })?;
            Ok(ForegroundSample {
                id: format!("{prefix}{}", stem(path)),
                fg: loaded.image,
                alpha: AlphaMatte::new(alpha.alpha, quality),
                split,
            })
        })
        .collect()
}

/// Loads every foreground under `dir`; see the module docs for the layout.
pub fn load_foregrounds(dir: impl AsRef<Path>) -> Result<Vec<ForegroundSample>> {
    let dir = dir.as_ref();
    let groups = [
        (FINE_DIR, Quality::Fine, Split::Train),
        (COARSE_DIR, Quality::Coarse, Split::Train),
        (TEST_DIR, Quality::Fine, Split::Test),
    ];
    if !groups.iter().any(|(sub, ..)| dir.join(sub).is_dir()) {
        return load_group(dir, Quality::Fine, Split::Train, "");
    }
    let mut out = Vec::new();
    for (sub, quality, split) in groups {
        let path = dir.join(sub);
        if path.is_dir() {
            // Prefixed so equal file names in two groups stay distinct.
            out.extend(load_group(&path, quality, split, &format!("{sub}-"))?);
        }
    }
    Ok(out)
}

/// Loads every PNG in `dir` as a background.
pub fn load_backgrounds(dir: impl AsRef<Path>) -> Result<Vec<Background>> {
    list_pngs(dir.as_ref())?
        .par_iter()
        .map(|path| {
            Ok(Background {
                name: stem(path),
                source: Some(path.clone()),
                image: load_image(path)?.image,
            })
        })
        .collect()
}

/// Writes a corpus as `fg_dir/{fine,coarse,test}/<id>.png` (RGBA) and
/// `bg_dir/<name>.png`, readable by [`load_foregrounds`] and
/// [`load_backgrounds`].
pub fn save_corpus(corpus: &ProceduralCorpus, fg_dir: impl AsRef<Path>, bg_dir: impl AsRef<Path>) -> Result<()> {
    let (fg_dir, bg_dir) = (fg_dir.as_ref(), bg_dir.as_ref());
    for sub in [FINE_DIR, COARSE_DIR, TEST_DIR] {
        let p = fg_dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    fs::create_dir_all(bg_dir).map_err(|e| Error::io(bg_dir, e))?;
    corpus.foregrounds.par_iter().try_for_each(|s| {
        let sub = match (s.split, s.quality()) {
            (Split::Test, _) => TEST_DIR,
            (Split::Train, Quality::Fine) => FINE_DIR,
            (Split::Train, Quality::Coarse) => COARSE_DIR,
        };
        save_rgba(&s.fg, &s.alpha.alpha, fg_dir.join(sub).join(format!("{}.png", s.id)))
    })?;
    corpus
        .backgrounds
        .par_iter()
        .try_for_each(|b| save_image(&b.image, bg_dir.join(format!("{}.png", b.name))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::Rng;
    use crate::synthdata::procedural_corpus;

    #[test]
    fn corpus_round_trips_through_directories() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = procedural_corpus(3, 2, 1, 2, (24, 20), &Rng::new(4)).unwrap();
        save_corpus(&corpus, dir.path().join("fg"), dir.path().join("bg")).unwrap();
        let fgs = load_foregrounds(dir.path().join("fg")).unwrap();
        let bgs = load_backgrounds(dir.path().join("bg")).unwrap();
        assert_eq!(bgs.len(), 2);
        assert_eq!(fgs.len(), 5);
        let count = |q: Quality, s: Split| fgs.iter().filter(|f| f.quality() == q && f.split == s).count();
        assert_eq!(count(Quality::Fine, Split::Train), 2);
        assert_eq!(count(Quality::Coarse, Split::Train), 2);
        assert_eq!(count(Quality::Fine, Split::Test), 1);
        assert!(fgs.iter().all(|f| f.fg.size() == (24, 20) && f.alpha.size() == (24, 20)));
    }

    #[test]
    fn flat_directory_is_fine_training_data() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = procedural_corpus(2, 0, 0, 1, (16, 16), &Rng::new(5)).unwrap();
        for s in &corpus.foregrounds {
            save_rgba(&s.fg, &s.alpha.alpha, dir.path().join(format!("{}.png", s.id))).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let fgs = load_foregrounds(dir.path()).unwrap();
        assert_eq!(fgs.len(), 2);
        assert!(fgs.iter().all(|f| f.quality() == Quality::Fine && f.split == Split::Train));
    }

    #[test]
    fn opaque_png_is_rejected_as_foreground() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = procedural_corpus(1, 0, 0, 1, (16, 16), &Rng::new(6)).unwrap();
        save_image(&corpus.backgrounds[0].image, dir.path().join("plain.png")).unwrap();
        assert!(matches!(load_foregrounds(dir.path()), Err(Error::Decode { .. })));
    }
}
