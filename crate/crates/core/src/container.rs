//! Self-checking binary container shared by datasets, smoother outputs and checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RTSA" | u32 version | u32 kind_len | kind | u32 meta_len | meta (JSON)
//! u32 array_count
//! per array: u32 name_len | name | u32 ndim | u64 dims[ndim] | f64 values[prod(dims)]
//! 32-byte SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::Tensor;

pub const MAGIC: &[u8; 4] = b"RTSA";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Json,
    pub arrays: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: Json) -> Self {
        Self {
            kind: kind.into(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.arrays.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Corrupt(format!("missing array `{name}`")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Incompatible(format!(
                "expected a {kind} file, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.meta.to_string());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Corrupt("not a container file or truncated header".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Corrupt("checksum mismatch (truncated or modified file)".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let kind = r.string()?;
        let meta =
            serde_json::from_str(&r.string()?).map_err(|e| Error::Corrupt(format!("metadata is not JSON: {e}")))?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Corrupt("dimension overflow".into()))?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| Error::Corrupt("array size overflow".into()))?;
            let raw = r.take(
                len.checked_mul(8)
                    .ok_or_else(|| Error::Corrupt("array size overflow".into()))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            arrays.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != body.len() {
            return Err(Error::Corrupt("trailing bytes after last array".into()));
        }
        Ok(Self { kind, meta, arrays })
    }

    /// Writes to a sibling temporary file and renames it over `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Corrupt("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Container {
        let mut c = Container::new("test", json!({"seed": 7, "label": "x"}));
        c.push(
            "a",
            Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE, 0.1, -0.0]).unwrap(),
        );
        c.push("empty", Tensor::new(vec![0, 4], vec![]).unwrap());
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.meta, c.meta);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.get("a").unwrap()), bits(c.get("a").unwrap()));
        assert_eq!(back.get("empty").unwrap().shape(), &[0, 4]);
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Container::from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))));
        }
        let mut flipped = bytes.clone();
        flipped[20] ^= 1;
        assert!(matches!(Container::from_bytes(&flipped), Err(Error::Corrupt(_))));
    }

    #[test]
    fn wrong_kind_is_reported() {
        let c = sample();
        assert!(c.expect_kind("test").is_ok());
        assert!(matches!(c.expect_kind("checkpoint"), Err(Error::Incompatible(_))));
        assert!(matches!(c.get("nope"), Err(Error::Corrupt(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/c.rtsa");
        sample().write(&path).unwrap();
        assert_eq!(Container::read(&path).unwrap(), sample());
        assert!(matches!(
            Container::read(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
