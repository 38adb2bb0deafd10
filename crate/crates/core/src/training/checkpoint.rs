//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `AGZE`, `u16` version, `u32` length plus
//! UTF-8 JSON metadata, `u32` tensor count, then per tensor: `u32` name
//! length, name, `u32` rank, `u32` dims, `f32` data.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"AGZE";
pub const VERSION: u16 = 1;

/// Upper bound on elements per tensor accepted by the decoder.
const MAX_ELEMENTS: usize = 1 << 31;

pub fn encode(meta_json: &str, tensors: &[(String, &Tensor)]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|(n, t)| 12 + n.len() + 4 * t.rank() + 4 * t.len()).sum();
    let mut out = Vec::with_capacity(14 + meta_json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(meta_json.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

/// Parses a checkpoint image; nothing is returned unless the whole file is
/// well formed.
pub fn decode(bytes: &[u8]) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an AGZE checkpoint".into()));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta = r.string(meta_len, "metadata")?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = r.string(name_len, "tensor name")?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::new();
        let mut len = 1usize;
        for _ in 0..rank {
            let d = r.u32("dims")? as usize;
            len = len.saturating_mul(d);
            shape.push(d);
        }
        if rank == 0 || len == 0 || len > MAX_ELEMENTS {
            return Err(Error::Checkpoint(format!("tensor `{name}` has invalid shape {shape:?}")));
        }
        let raw = r.take(len.saturating_mul(4), "tensor data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((meta, tensors))
}

/// Writes through a temporary sibling file so a crash never leaves a
/// half-written checkpoint under `path`.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let a = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap();
        let b = Tensor::full(&[1], 7.0);
        encode("{\"k\":1}", &[("a".into(), &a), ("b.w".into(), &b)])
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = sample();
        let (meta, tensors) = decode(&bytes).unwrap();
        assert_eq!(meta, "{\"k\":1}");
        let refs: Vec<(String, &Tensor)> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        assert_eq!(encode(&meta, &refs), bytes);
    }

    #[test]
    fn every_truncation_is_a_clean_error() {
        let bytes = sample();
        for n in 0..bytes.len() {
            assert!(matches!(decode(&bytes[..n]), Err(Error::Checkpoint(_))), "prefix {n}");
        }
    }

    #[test]
    fn magic_and_version_checked() {
        let mut bytes = sample();
        bytes[0] = b'X';
        assert!(decode(&bytes).unwrap_err().to_string().contains("magic"));
        let mut bytes = sample();
        bytes[4] = 9;
        assert!(decode(&bytes).unwrap_err().to_string().contains("version"));
    }
}
