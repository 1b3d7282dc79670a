//! Binary container for model and recognizer weights.
//!
//! Byte layout, all integers little-endian:
//!
//! | field        | encoding                                                     |
//! |--------------|--------------------------------------------------------------|
//! | magic        | 8 bytes `MOWECKPT`                                           |
//! | version      | `u32`, currently 1                                           |
//! | header       | `u32` byte length, then UTF-8 `key=value` lines, each `\n`-terminated |
//! | blob count   | `u32`                                                        |
//! | each blob    | `u32` name length, UTF-8 name, `u32` rank, rank × `u64` dims, then `prod(dims)` × `f64` |
//!
//! Header keys and blob names are unique. Keys and values never contain `=` in the key
//! or a newline anywhere.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MOWECKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub blobs: Vec<(String, Tensor)>,
}

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return fmt_err("checkpoint is truncated");
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .or_else(|_| fmt_err("checkpoint text is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn blob(&self, name: &str) -> Option<&Tensor> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut text = String::new();
        for (k, v) in &self.header {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return fmt_err(format!("header entry `{k}` cannot be encoded"));
            }
            text.push_str(&format!("{k}={v}\n"));
        }
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, t) in &self.blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return fmt_err("not a checkpoint (bad magic)");
        }
        let version = r.u32()?;
        if version != VERSION {
            return fmt_err(format!("unsupported checkpoint version {version}"));
        }
        let len = r.u32()? as usize;
        let text = r.string(len)?;
        let mut header = Vec::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line `{line}`")))?;
            header.push((k.to_string(), v.to_string()));
        }
        let count = r.u32()? as usize;
        let mut blobs = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = r.string(n)?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = match numel {
                Some(n) if n <= (bytes.len() - r.pos) / 8 => n,
                _ => return fmt_err(format!("blob {name} has an impossible shape {shape:?}")),
            };
            let data = r
                .take(numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blobs.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return fmt_err("trailing bytes after the last blob");
        }
        Ok(Checkpoint { header, blobs })
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("partial");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            header: vec![
                ("kind".into(), "test".into()),
                ("lr".into(), "0.002".into()),
            ],
            blobs: vec![
                (
                    "a.w".into(),
                    Tensor::from_fn([2, 3], |i| i as f64 * 0.5 - 1.0),
                ),
                ("s".into(), Tensor::scalar(f64::MIN_POSITIVE)),
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
        assert_eq!(c.header_value("lr"), Some("0.002"));
        assert_eq!(c.blob("s").unwrap().item(), f64::MIN_POSITIVE);
    }

    #[test]
    fn layout_matches_documentation() {
        let c = Checkpoint {
            header: vec![("k".into(), "v".into())],
            blobs: vec![("x".into(), Tensor::new([1], vec![1.0]).unwrap())],
        };
        let mut expect = b"MOWECKPT".to_vec();
        expect.extend(1u32.to_le_bytes());
        expect.extend(4u32.to_le_bytes());
        expect.extend(b"k=v\n");
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(b"x");
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u64.to_le_bytes());
        expect.extend(1.0f64.to_le_bytes());
        assert_eq!(c.to_bytes().unwrap(), expect);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
