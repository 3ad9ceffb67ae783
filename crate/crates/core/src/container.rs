//! Versioned binary container for models, projections and datasets.
//!
//! Layout: magic `MEMMOBIN` (8 bytes), format version (u32 LE), header
//! length in bytes (u32 LE), UTF-8 JSON header, then every matrix listed in
//! the header in order, row-major, as little-endian f64.

use std::fs;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MEMMOBIN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MatrixEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: Value,
    matrices: Vec<MatrixEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    matrices: Vec<(String, DMatrix<f64>)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            matrices: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: DMatrix<f64>) -> &mut Self {
        self.matrices.push((name.into(), m));
        self
    }

    pub fn with(mut self, name: impl Into<String>, m: DMatrix<f64>) -> Self {
        self.push(name, m);
        self
    }

    pub fn get(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.matrices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format(format!("container has no matrix '{name}'")))
    }

    pub fn take(&mut self, name: &str) -> Result<DMatrix<f64>> {
        let i = self
            .matrices
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("container has no matrix '{name}'")))?;
        Ok(self.matrices.remove(i).1)
    }

    /// Fails with a format error unless the container holds `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!("expected a '{kind}' container, found '{}'", self.kind)))
        }
    }

    pub fn meta_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.meta.clone())?)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            matrices: self
                .matrices
                .iter()
                .map(|(name, m)| MatrixEntry {
                    name: name.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&json)?;
        for (_, m) in &self.matrices {
            let mut buf = Vec::with_capacity(m.len() * 8);
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    buf.extend_from_slice(&m[(r, c)].to_le_bytes());
                }
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        r.read_exact(&mut word)?;
        let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let mut matrices = Vec::with_capacity(header.matrices.len());
        for entry in header.matrices {
            let n = entry
                .rows
                .checked_mul(entry.cols)
                .ok_or_else(|| Error::Format("matrix shape overflows".into()))?;
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
            let m = DMatrix::from_row_iterator(entry.rows, entry.cols, values);
            matrices.push((entry.name, m));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            matrices,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = DMatrix::from_row_slice(2, 3, &[0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, std::f64::consts::PI]);
        let b = DMatrix::<f64>::zeros(0, 4);
        let c = Container::new("test", json!({"k": 3})).with("a", a.clone()).with("b", b.clone());
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.meta, json!({"k": 3}));
        let a2 = back.get("a").unwrap();
        assert!(a.iter().zip(a2.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.get("b").unwrap().shape(), (0, 4));
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let c = Container::new("x", json!(null)).with("m", DMatrix::from_element(2, 2, 1.0));
        let mut bytes = c.to_bytes().unwrap();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Format(_))));
    }
}
