//! Checkpoint files: a JSON manifest naming each block and its shape, plus a
//! flat little-endian `f64` binary holding the values in manifest order.
//!
//! `save("run/ckpt", ..)` writes `run/ckpt.json` and `run/ckpt.bin`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ParameterBlock;
use crate::error::{Error, Result};

pub const FORMAT: &str = "dccp-marl-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the binary, in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub metadata: BTreeMap<String, String>,
    pub blocks: Vec<BlockEntry>,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    with_ext(stem, "json")
}

pub fn binary_path(stem: &Path) -> PathBuf {
    with_ext(stem, "bin")
}

pub fn save(stem: &Path, blocks: &[&ParameterBlock], metadata: BTreeMap<String, String>) -> Result<Manifest> {
    let mut entries = Vec::with_capacity(blocks.len());
    let mut bytes = Vec::new();
    let mut offset = 0;
    for b in blocks {
        if entries.iter().any(|e: &BlockEntry| e.name == b.name()) {
            return Err(Error::Checkpoint(format!("duplicate block name `{}`", b.name())));
        }
        entries.push(BlockEntry {
            name: b.name().to_string(),
            shape: b.shape().to_vec(),
            offset,
        });
        offset += b.len();
        for v in b.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        metadata,
        blocks: entries,
    };
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(manifest_path(stem), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(binary_path(stem), bytes)?;
    Ok(manifest)
}

pub fn read_manifest(stem: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path(stem))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format `{}`", manifest.format)));
    }
    Ok(manifest)
}

/// Loads values into `blocks`, matching by name and shape.
pub fn load_into(stem: &Path, blocks: &mut [&mut ParameterBlock]) -> Result<Manifest> {
    let manifest = read_manifest(stem)?;
    let bytes = fs::read(binary_path(stem))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("binary length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    for b in blocks.iter_mut() {
        let entry = manifest
            .blocks
            .iter()
            .find(|e| e.name == b.name())
            .ok_or_else(|| Error::Checkpoint(format!("block `{}` missing from checkpoint", b.name())))?;
        if entry.shape != b.shape() {
            return Err(Error::Checkpoint(format!(
                "block `{}` has shape {:?} in checkpoint, expected {:?}",
                b.name(),
                entry.shape,
                b.shape()
            )));
        }
        let end = entry.offset + b.len();
        if end > values.len() {
            return Err(Error::Checkpoint(format!("block `{}` runs past end of binary", b.name())));
        }
        b.values_mut().copy_from_slice(&values[entry.offset..end]);
    }
    Ok(manifest)
}
