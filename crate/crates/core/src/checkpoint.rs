//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `CTXEXT\0\x01`, a little-endian `u64` header
//! length, a JSON header (model config, tensor names and lengths, extended
//! table layout) and then every tensor as little-endian `f64` in header
//! order. Saving a loaded checkpoint reproduces the input bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{init_model, ExtendedTable, Model, ModelConfig, PositionEmbeddingMatrix};
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::tuner::TuneMode;

const MAGIC: &[u8; 8] = b"CTXEXT\0\x01";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExtendedHeader {
    mode: TuneMode,
    target_context: usize,
    rows: usize,
    frozen: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    extended: Option<ExtendedHeader>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let tensors = model.named_tensors();
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        tensors: tensors
            .iter()
            .map(|(name, data)| TensorEntry {
                name: name.clone(),
                len: data.len(),
            })
            .collect(),
        extended: model.extended_table().map(|e| ExtendedHeader {
            mode: e.mode,
            target_context: e.target_context,
            rows: e.table.len(),
            frozen: e.table.frozen_flags().to_vec(),
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let ext = model.extended_table().map(|e| e.table.matrix().data());
    for data in tensors.iter().map(|(_, d)| *d).chain(ext) {
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64s(&mut self, dst: &mut [f64]) -> Result<()> {
        let raw = self.take(dst.len() * 8)?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        Ok(())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let mut model = init_model(&header.config)?;
    {
        let mut slots = model.named_tensors_mut();
        if slots.len() != header.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, header lists {}",
                slots.len(),
                header.tensors.len()
            )));
        }
        for ((name, dst), entry) in slots.iter_mut().zip(&header.tensors) {
            if *name != entry.name || dst.len() != entry.len {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: expected {name} [{}], found {} [{}]",
                    dst.len(),
                    entry.name,
                    entry.len
                )));
            }
            r.f64s(dst)?;
        }
    }
    if let Some(ext) = header.extended {
        let mut rows = Matrix::zeros(ext.rows, header.config.hidden_size);
        r.f64s(rows.data_mut())?;
        model.install_extended_table(ExtendedTable {
            mode: ext.mode,
            target_context: ext.target_context,
            table: PositionEmbeddingMatrix::with_flags(rows, ext.frozen)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}
