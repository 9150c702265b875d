//! Binary checkpoint layout (all integers little-endian `u32`):
//!
//! ```text
//! "MKPT1" | net id (u8) | base_width depth low_h low_w high_h high_w scale_gap
//! | array count | per array: name length, name bytes, ndim, dims…, f32 values
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::{NetConfig, NetKind, NetParams, ParamSet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MKPT1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn write_checkpoint(p: &NetParams, out: &mut impl Write) -> Result<()> {
    let cfg = p.config();
    let mut buf = Vec::with_capacity(64 + 4 * p.params().count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(p.kind().id());
    for v in [
        cfg.base_width,
        cfg.depth,
        cfg.low_res.0,
        cfg.low_res.1,
        cfg.high_res.0,
        cfg.high_res.1,
        cfg.scale_gap,
    ] {
        put_u32(&mut buf, v)?;
    }
    put_u32(&mut buf, p.params().len())?;
    for param in p.params().iter() {
        put_u32(&mut buf, param.name.len())?;
        buf.extend_from_slice(param.name.as_bytes());
        put_u32(&mut buf, param.value.ndim())?;
        for &d in param.value.shape() {
            put_u32(&mut buf, d)?;
        }
        for &v in param.value.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<NetParams> {
    let mut data = Vec::new();
    input
        .read_to_end(&mut data)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let id = r.take(1)?[0];
    let kind = NetKind::from_id(id).ok_or_else(|| Error::Checkpoint(format!("unknown net id {id}")))?;
    let config = NetConfig {
        base_width: r.u32()?,
        depth: r.u32()?,
        low_res: (r.u32()?, r.u32()?),
        high_res: (r.u32()?, r.u32()?),
        scale_gap: r.u32()?,
    };
    // a bogus depth would make declaration loop for a long time
    if config.depth > 16 {
        return Err(Error::Checkpoint(format!("implausible depth {}", config.depth)));
    }
    let count = r.u32()?;
    let mut set = ParamSet::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        if set.find(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        set.push(name, ArrayD::from_shape_vec(IxDyn(&shape), values).expect("length checked"));
    }
    if r.pos != data.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", data.len() - r.pos)));
    }
    NetParams::from_parts(kind, config, set)
}

pub fn save_checkpoint(p: &NetParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(p, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint, rejecting it unless it holds `kind` with exactly `expected` config
/// (when given).
pub fn load_checkpoint(path: impl AsRef<Path>, kind: NetKind, expected: Option<&NetConfig>) -> Result<NetParams> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let p = read_checkpoint(&mut file)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if p.kind() != kind {
        return Err(Error::Checkpoint(format!(
            "{}: holds {} parameters, expected {kind}",
            path.display(),
            p.kind()
        )));
    }
    if let Some(cfg) = expected {
        if p.config() != cfg {
            return Err(Error::Checkpoint(format!(
                "{}: config {:?} does not match expected {:?}",
                path.display(),
                p.config(),
                cfg
            )));
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::Rng;
    use crate::nets::init_params;

    #[test]
    fn roundtrip_rounds_to_f32() {
        let cfg = NetConfig::desk((8, 8));
        let p = init_params(&cfg, NetKind::Mrn, &mut Rng::new(2)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"MKPT1");
        let q = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(q.kind(), NetKind::Mrn);
        assert_eq!(q.config(), &cfg);
        for (a, b) in p.params().iter().zip(q.params().iter()) {
            assert_eq!(a.name, b.name);
            for (&x, &y) in a.value.iter().zip(b.value.iter()) {
                assert_eq!(x as f32, y as f32);
            }
        }
        // a second trip is exact
        let mut buf2 = Vec::new();
        write_checkpoint(&q, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_corruption_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NetConfig::desk((8, 8));
        let p = init_params(&cfg, NetKind::Qun, &mut Rng::new(2)).unwrap();
        let path = dir.path().join("qun.mkpt");
        save_checkpoint(&p, &path).unwrap();
        assert!(load_checkpoint(&path, NetKind::Qun, Some(&cfg)).is_ok());
        assert!(load_checkpoint(&path, NetKind::Mpn, None).is_err());
        let other = NetConfig { base_width: 12, ..cfg };
        assert!(load_checkpoint(&path, NetKind::Qun, Some(&other)).is_err());

        let bytes = fs::read(&path).unwrap();
        assert!(read_checkpoint(&mut &bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut bad.as_slice()).is_err());
        // header claims a wider net than the arrays hold
        let mut wide = bytes;
        wide[6] = 16;
        assert!(read_checkpoint(&mut wide.as_slice()).is_err());
    }
}
