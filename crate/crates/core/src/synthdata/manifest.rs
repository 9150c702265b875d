//! Tab-separated dataset index.
//!
//! ```text
//! coarsematte-manifest	1
//! composite/p0_3.png	alpha/p0_3.png	fg/p0_3.png	bg/b3.png	fine	train
//! ```
//!
//! Relative paths are resolved against the directory holding the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imagery::Quality;

pub const MANIFEST_MAGIC: &str = "coarsematte-manifest";
pub const MANIFEST_VERSION: u32 = 1;
const FIELDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split {other:?} (expected train or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub composite: String,
    pub alpha: String,
    pub fg: String,
    pub bg: String,
    pub quality: Quality,
    pub split: Split,
}

impl ManifestRecord {
    /// File stem of the composite, unique per record.
    pub fn id(&self) -> String {
        Path::new(&self.composite)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.composite.clone())
    }

    fn paths(&self) -> [(&'static str, &str); 4] {
        [
            ("composite", &self.composite),
            ("alpha", &self.alpha),
            ("fg", &self.fg),
            ("bg", &self.bg),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>) -> Self {
        DatasetManifest {
            records,
            root: PathBuf::new(),
        }
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn filter(&self, keep: impl Fn(&ManifestRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            root: self.root.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_MAGIC}\t{MANIFEST_VERSION}\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.composite,
                r.alpha,
                r.fg,
                r.bg,
                r.quality,
                r.split.as_str()
            );
        }
        out
    }

    /// Parses manifest text without touching the filesystem. `origin` is
    /// only used in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<DatasetManifest> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .map(|(_, l)| l)
            .ok_or_else(|| Error::parse(origin, 1, "missing manifest header"))?;
        let mut head = header.split('\t');
        if head.next() != Some(MANIFEST_MAGIC) {
            return Err(Error::parse(origin, 1, format!("expected header {MANIFEST_MAGIC:?}")));
        }
        match head.next().map(str::parse::<u32>) {
            Some(Ok(MANIFEST_VERSION)) if head.next().is_none() => {}
            _ => {
                return Err(Error::parse(
                    origin,
                    1,
                    format!("unsupported manifest version (expected {MANIFEST_VERSION})"),
                ))
            }
        }

        let mut records = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != FIELDS {
                let missing = ["composite", "alpha", "fg", "bg", "quality", "split"];
                let msg = if fields.len() < FIELDS {
                    format!("missing field(s): {}", missing[fields.len()..].join(", "))
                } else {
                    format!("{} unknown extra field(s)", fields.len() - FIELDS)
                };
                return Err(Error::parse(origin, lineno, msg));
            }
            if let Some(pos) = fields[..4].iter().position(|f| f.is_empty()) {
                return Err(Error::parse(origin, lineno, format!("empty path in column {}", pos + 1)));
            }
            let quality = fields[4]
                .parse()
                .map_err(|e: Error| Error::parse(origin, lineno, e.to_string()))?;
            let split = fields[5]
                .parse()
                .map_err(|e: Error| Error::parse(origin, lineno, e.to_string()))?;
            records.push(ManifestRecord {
                composite: fields[0].into(),
                alpha: fields[1].into(),
                fg: fields[2].into(),
                bg: fields[3].into(),
                quality,
                split,
            });
        }
        Ok(DatasetManifest {
            records,
            root: PathBuf::new(),
        })
    }
}

/// Reads a manifest and checks that every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = DatasetManifest::parse(&text, path)?;
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    // header occupies line 1, blank lines are skipped
    let record_lines: Vec<usize> = text
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, _)| i + 1)
        .collect();
    for (record, &lineno) in manifest.records.iter().zip(&record_lines) {
        for (what, p) in record.paths() {
            if !manifest.resolve(p).is_file() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("{what} file {p:?} does not exist"),
                ));
            }
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_text()).map_err(|e| Error::io(path, e))
}
