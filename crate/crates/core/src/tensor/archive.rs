//! Flat parameter archive.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "DNTARCH\0"
//! version      u32      1
//! count        u32      number of entries
//! entry * count, sorted by name:
//!   name_len   u32
//!   name       name_len bytes, UTF-8 dotted path
//!   ndim       u32
//!   dims       u32 * ndim
//!   data       f32 * product(dims)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"DNTARCH\0";
pub const ARCHIVE_VERSION: u32 = 1;

pub fn encode_archive(entries: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_archive(bytes: &[u8], path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(8)? != ARCHIVE_MAGIC {
        return Err(Error::parse(path, "bad archive magic"));
    }
    let version = cur.u32()?;
    if version != ARCHIVE_VERSION {
        return Err(Error::parse(path, format!("unsupported archive version {version}")));
    }
    let count = cur.u32()?;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::parse(path, "entry name is not UTF-8"))?
            .to_owned();
        let ndim = cur.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::parse(path, format!("{name}: {e}")))?;
        entries.insert(name, t);
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse(path, "trailing bytes after last entry"));
    }
    Ok(entries)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::parse(self.path, "archive truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn write_archive(path: &Path, entries: &BTreeMap<String, Tensor>) -> Result<()> {
    fs::write(path, encode_archive(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout_is_stable() {
        let mut m = BTreeMap::new();
        m.insert("a.w".to_string(), Tensor::new([1, 2], vec![1.0, -2.0]).unwrap());
        let bytes = encode_archive(&m);
        let mut expect = Vec::new();
        expect.extend_from_slice(b"DNTARCH\0");
        expect.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0]);
        expect.extend_from_slice(b"a.w");
        expect.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expect);
        assert_eq!(decode_archive(&bytes, Path::new("mem")).unwrap(), m);
    }

    #[test]
    fn truncated_archive_is_rejected() {
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), Tensor::zeros([4]));
        let bytes = encode_archive(&m);
        assert!(decode_archive(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        assert!(decode_archive(b"nope", Path::new("mem")).is_err());
    }
}
