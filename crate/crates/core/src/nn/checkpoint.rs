//! `HMBK` container: magic, u32 version, u32 header length, JSON header,
//! then every tensor as little-endian f32 in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ParamSet, TrainConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HMBK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub model: serde_json::Value,
    pub train: Option<TrainConfig>,
    pub dataset_fingerprint: Option<String>,
    #[serde(default)]
    pub loss_history: Vec<f64>,
    /// Filled in by [`write_checkpoint`].
    #[serde(default)]
    pub tensors: Vec<TensorInfo>,
}

pub fn write_checkpoint(path: impl AsRef<Path>, header: &CheckpointHeader, params: &ParamSet<f32>) -> Result<()> {
    let mut header = header.clone();
    header.tensors = params
        .names()
        .iter()
        .zip(params.values())
        .map(|(name, v)| TensorInfo {
            name: name.clone(),
            shape: [v.nrows(), v.ncols()],
        })
        .collect();
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?.to_le_bytes())?;
    w.write_all(&json)?;
    for v in params.values() {
        for x in v.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, ParamSet<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 4];
    read_or(&mut r, &mut word, "magic")?;
    if &word != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    read_or(&mut r, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    read_or(&mut r, &mut word, "header length")?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    read_or(&mut r, &mut json, "header")?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let mut params = ParamSet::new();
    for t in &header.tensors {
        let n = t.shape[0] * t.shape[1];
        let mut bytes = vec![0u8; n * 4];
        read_or(&mut r, &mut bytes, &t.name)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let a = Array2::from_shape_vec((t.shape[0], t.shape[1]), data).map_err(|e| Error::Format(e.to_string()))?;
        params.add(t.name.clone(), a);
    }
    if r.read(&mut word)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    Ok((header, params))
}

fn read_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("checkpoint truncated while reading {what}")))
}
