//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SSDA" 0x01
//! u32 entry count
//! per entry: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
//!            product(dims) x f32 values (row-major)
//! u32 CRC32 of every byte between the magic and the checksum
//! ```
//!
//! Values are stored as `f32`, so saving a loaded checkpoint reproduces the
//! file byte for byte.

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};

pub const MAGIC: &[u8; 5] = b"SSDA\x01";
pub const EXTENSION: &str = "ssda";

pub fn encode(params: &ParamSet) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    let count = u32::try_from(params.len()).map_err(|_| Error::InvalidInput("too many entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidInput(format!("parameter name too long: {}", p.name)))?;
        let rank = u8::try_from(p.shape.len())
            .map_err(|_| Error::InvalidInput(format!("{}: rank {} too large", p.name, p.shape.len())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &p.shape {
            let d = u32::try_from(d).map_err(|_| Error::InvalidInput(format!("{}: dimension {d} too large", p.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &p.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[MAGIC.len()..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ParamSet> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(path, "bad checkpoint magic"));
    }
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::format(path, "truncated checkpoint"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(&body[MAGIC.len()..]);
    if stored != actual {
        return Err(Error::format(
            path,
            format!("checksum mismatch (stored {stored:08x}, computed {actual:08x})"),
        ));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
        path,
    };
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(path, format!("{name}: shape overflows")))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::format(path, "size overflow"))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        let param = Param::new(name, shape, values).map_err(|e| Error::format(path, e.to_string()))?;
        params.push(param).map_err(|e| Error::format(path, e.to_string()))?;
    }
    if r.pos != body.len() {
        return Err(Error::format(path, format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(params)
}

pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    let bytes = encode(params)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
