//! Checkpoint container: `"ESCK" | version u32 | header length u64 | JSON header
//! | raw little-endian f32 blobs`. The header holds the model configuration and
//! a registry of `(name, shape, byte offset)`; offsets are relative to the
//! first payload byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MhfaConfig, MhfaParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ESCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: MhfaConfig,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

pub fn write_checkpoint<W: Write>(cfg: &MhfaConfig, params: &MhfaParams<f32>, mut dest: W) -> Result<()> {
    let mut offset = 0u64;
    let mut entries = Vec::new();
    for (name, t) in params.names().into_iter().zip(params.tensors()) {
        entries.push(Entry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel() as u64 * 4;
    }
    let header = serde_json::to_vec(&Header {
        config: cfg.clone(),
        params: entries,
    })?;
    dest.write_all(CHECKPOINT_MAGIC)?;
    dest.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    dest.write_all(&(header.len() as u64).to_le_bytes())?;
    dest.write_all(&header)?;
    for t in params.tensors() {
        for v in t.data() {
            dest.write_all(&v.to_le_bytes())?;
        }
    }
    dest.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut src: R) -> Result<(MhfaConfig, MhfaParams<f32>)> {
    let mut fixed = [0u8; 16];
    src.read_exact(&mut fixed)
        .map_err(|_| Error::Format("checkpoint shorter than its fixed header".into()))?;
    if &fixed[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(fixed[8..16].try_into().unwrap());
    let mut header = Vec::new();
    (&mut src).take(header_len).read_to_end(&mut header)?;
    if header.len() as u64 != header_len {
        return Err(Error::Corrupt {
            expected: header_len,
            actual: header.len() as u64,
        });
    }
    let header: Header = serde_json::from_slice(&header)?;
    header.config.validate()?;

    let mut payload = Vec::new();
    src.read_to_end(&mut payload)?;
    let expected_names = MhfaParams::<f32>::expected_shapes(&header.config);
    if header.params.len() != expected_names.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, configuration needs {}",
            header.params.len(),
            expected_names.len()
        )));
    }
    let needed: u64 = header
        .params
        .iter()
        .map(|e| e.offset + e.shape.iter().product::<usize>() as u64 * 4)
        .max()
        .unwrap_or(0);
    if (payload.len() as u64) < needed {
        return Err(Error::Corrupt {
            expected: needed,
            actual: payload.len() as u64,
        });
    }
    let mut tensors = Vec::with_capacity(header.params.len());
    for (entry, (name, _)) in header.params.iter().zip(&expected_names) {
        if entry.name != *name {
            return Err(Error::Format(format!("expected tensor {name}, found {}", entry.name)));
        }
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let data = payload[start..start + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
    }
    let params = MhfaParams::from_tensors(&header.config, tensors)?;
    Ok((header.config, params))
}

pub fn save_checkpoint(path: &Path, cfg: &MhfaConfig, params: &MhfaParams<f32>) -> Result<()> {
    write_checkpoint(cfg, params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<(MhfaConfig, MhfaParams<f32>)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
