//! Tab-separated `key<TAB>value` text used for training configs and
//! degradation specs. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    origin: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, idx + 1, "expected key<TAB>value"))?;
            let key = key.trim();
            if entries
                .insert(key.to_string(), (idx + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::parse(origin, idx + 1, format!("duplicate key {key:?}")));
            }
        }
        Ok(KeyValues {
            origin: origin.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KeyValues::parse(&text, path)
    }

    /// Parses `key` when present, leaving `target` untouched otherwise.
    pub fn take<T: FromStr>(&mut self, key: &str, target: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some((line, value)) = self.entries.remove(key) {
            *target = value
                .parse()
                .map_err(|e: T::Err| Error::parse(&self.origin, line, format!("{key}: {e}")))?;
        }
        Ok(())
    }

    pub fn take_with<T>(&mut self, key: &str, target: &mut T, f: impl FnOnce(&str) -> Result<T>) -> Result<()> {
        if let Some((line, value)) = self.entries.remove(key) {
            *target = f(&value).map_err(|e| Error::parse(&self.origin, line, format!("{key}: {e}")))?;
        }
        Ok(())
    }

    /// Fails on the first key no caller consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::parse(&self.origin, line, format!("unknown key {key:?}"))),
        }
    }
}

pub(crate) fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e: T::Err| Error::InvalidArgument(format!("{s:?}: {e}")))
        })
        .collect()
}

pub(crate) fn parse_pair(value: &str) -> Result<(usize, usize)> {
    let v: Vec<usize> = value
        .split(['x', ','])
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("{s:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    match v.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::InvalidArgument(format!("expected HxW, got {value:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_unknown() {
        let mut kv = KeyValues::parse("# c\nlr\t0.01\n\nsize\t4x8\nbogus\t1\n", Path::new("c.cfg")).unwrap();
        let mut lr = 1.0f64;
        let mut size = (0, 0);
        kv.take("lr", &mut lr).unwrap();
        kv.take_with("size", &mut size, parse_pair).unwrap();
        assert_eq!(lr, 0.01);
        assert_eq!(size, (4, 8));
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("c.cfg:5") && err.contains("bogus"), "{err}");
    }

    #[test]
    fn rejects_malformed() {
        assert!(KeyValues::parse("novalue\n", Path::new("x")).is_err());
        assert!(KeyValues::parse("a\t1\na\t2\n", Path::new("x")).is_err());
        let mut kv = KeyValues::parse("lr\tabc\n", Path::new("x")).unwrap();
        let mut lr = 0.0f64;
        assert!(kv.take("lr", &mut lr).is_err());
    }
}
