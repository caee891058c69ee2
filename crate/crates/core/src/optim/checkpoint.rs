use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT: &str = "sharpness-checkpoint";

/// First line of a checkpoint file; the parameter block follows it as
/// little-endian `f64`s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub architecture: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub iteration: u64,
    pub num_params: usize,
}

impl CheckpointHeader {
    pub fn new(architecture: serde_json::Value, config_hash: String, seed: u64, iteration: u64, num_params: usize) -> Self {
        Self {
            format: FORMAT.into(),
            version: 1,
            architecture,
            config_hash,
            seed,
            iteration,
            num_params,
        }
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, header: &CheckpointHeader, params: &[f64]) -> Result<()> {
    if header.num_params != params.len() {
        return Err(Error::Checkpoint(format!(
            "header declares {} parameters but {} were given",
            header.num_params,
            params.len()
        )));
    }
    let json = serde_json::to_string(header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut bytes = Vec::with_capacity(json.len() + 1 + 8 * params.len());
    bytes.extend_from_slice(json.as_bytes());
    bytes.push(b'\n');
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
    }
    let body = &bytes[nl + 1..];
    if body.len() != 8 * header.num_params {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            8 * header.num_params,
            body.len()
        )));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, params))
}
