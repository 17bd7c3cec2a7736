//! Single-file container shared by datasets, dub outputs, and checkpoints.
//!
//! Layout:
//!
//! ```text
//! u64 LE   header length in bytes
//! [u8]     UTF-8 JSON header
//! [f32 LE] row-major blocks, back to back
//! ```
//!
//! The header is an object with `schema_version`, `kind`, free-form `meta`, and a
//! `blocks` table giving each block's name, shape, and byte offset relative to the
//! start of the data section.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub kind: String,
    pub meta: Value,
    pub blocks: Vec<BlockEntry>,
}

#[derive(Debug, Default)]
pub struct ContainerWriter {
    blocks: Vec<BlockEntry>,
    data: Vec<u8>,
}

impl ContainerWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, m: &Mat<f32>) {
        self.add_raw(name, [m.rows(), m.cols()], m.data());
    }

    pub fn add_raw(&mut self, name: impl Into<String>, shape: [usize; 2], values: &[f32]) {
        assert_eq!(shape[0] * shape[1], values.len(), "block shape does not match data");
        let name = name.into();
        debug_assert!(self.blocks.iter().all(|b| b.name != name), "duplicate block {name}");
        self.blocks.push(BlockEntry {
            name,
            shape,
            offset: self.data.len() as u64,
        });
        self.data.reserve(values.len() * 4);
        for v in values {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn to_bytes(&self, kind: &str, meta: Value) -> Result<Vec<u8>> {
        let header = Header {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            meta,
            blocks: self.blocks.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + self.data.len());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.data);
        Ok(out)
    }

    pub fn write(&self, path: &Path, kind: &str, meta: Value) -> Result<()> {
        let bytes = self.to_bytes(kind, meta)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct Container {
    pub header: Header,
    blocks: BTreeMap<String, Mat<f32>>,
}

impl Container {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Format("missing header length".into()))?;
        let hlen = u64::from_le_bytes(len_bytes) as usize;
        let json = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json)?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported schema version {}",
                header.schema_version
            )));
        }
        let data = &bytes[8 + hlen..];
        let mut blocks = BTreeMap::new();
        for b in &header.blocks {
            let n = b.shape[0] * b.shape[1];
            let start = b.offset as usize;
            let raw = data
                .get(start..start + 4 * n)
                .ok_or_else(|| Error::Format(format!("block {} out of bounds", b.name)))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blocks.insert(b.name.clone(), Mat::from_vec(b.shape[0], b.shape[1], values));
        }
        Ok(Self { header, blocks })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind} container, found {}",
                self.header.kind
            )));
        }
        Ok(())
    }

    pub fn block(&self, name: &str) -> Result<&Mat<f32>> {
        self.blocks
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing block {name}")))
    }

    pub fn take_block(&mut self, name: &str) -> Result<Mat<f32>> {
        self.blocks
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing block {name}")))
    }
}
