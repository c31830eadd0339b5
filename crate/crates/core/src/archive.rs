//! Binary container shared by snapshot archives and reduced caches.
//!
//! Layout:
//!
//! ```text
//! bytes 0..8     magic "ROMOCP\0\x01" (the last byte is the format version)
//! bytes 8..16    manifest length L, u64 little-endian
//! bytes 16..16+L JSON manifest, UTF-8
//! rest           f64 values, little-endian, arrays back to back
//! ```
//!
//! The manifest is an object with `kind`, free-form `meta`, and `arrays`:
//! a list of `{"name", "shape", "offset"}` where `offset` counts f64 values
//! from the start of the data section and the array is row-major in
//! `shape`. Any program that can write this layout can feed snapshots to
//! the offline stage.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"ROMOCP\0\x01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

/// An in-memory container: manifest metadata plus named arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub meta: serde_json::Value,
    arrays: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Archive {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Archive {
            kind: kind.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "array data does not match its shape"
        );
        self.arrays.push((name.into(), shape, data));
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::Archive(format!("missing array {name}")))
    }

    /// Array `name`, checked against an expected shape.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let (s, d) = self.get(name)?;
        if s != shape {
            return Err(Error::Archive(format!(
                "array {name} has shape {s:?}, expected {shape:?}"
            )));
        }
        Ok(d)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut offset = 0;
        let arrays = self
            .arrays
            .iter()
            .map(|(name, shape, data)| {
                let e = ArrayEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                    offset,
                };
                offset += data.len();
                e
            })
            .collect();
        let manifest = Manifest {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&manifest).map_err(std::io::Error::other)?;
        w.write_all(&MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, _, data) in &self.arrays {
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Archive(m.to_string());
        let mut head = [0u8; 16];
        r.read_exact(&mut head)
            .map_err(|_| bad("file too short for a header"))?;
        if head[..7] != MAGIC[..7] {
            return Err(bad("not a romocp archive (bad magic)"));
        }
        if head[7] != MAGIC[7] {
            return Err(Error::Archive(format!(
                "unsupported archive version {}",
                head[7]
            )));
        }
        let len = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)
            .map_err(|_| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&json)
            .map_err(|e| Error::Archive(format!("bad manifest: {e}")))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Archive(e.to_string()))?;
        if bytes.len() % 8 != 0 {
            return Err(bad("data section is not a whole number of f64 values"));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for e in manifest.arrays {
            let n: usize = e.shape.iter().product();
            let data = values.get(e.offset..e.offset + n).ok_or_else(|| {
                Error::Archive(format!("array {} runs past the end of the data", e.name))
            })?;
            arrays.push((e.name, e.shape, data.to_vec()));
        }
        Ok(Archive {
            kind: manifest.kind,
            meta: manifest.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f))
    }

    /// Checks the container kind, e.g. `"snapshots"` or `"cache"`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Archive(format!(
                "expected a {kind} archive, found {}",
                self.kind
            )));
        }
        Ok(())
    }
}
