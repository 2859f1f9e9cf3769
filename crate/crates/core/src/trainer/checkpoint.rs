//! Self-verifying checkpoint files.
//!
//! Layout: 8-byte magic, format version (u32 LE), payload length (u64 LE),
//! JSON payload, SHA-256 of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::netlab::{AdamState, Collection, ModelState};

use super::{EpochRecord, Precision, Result, StageKind, TrainError};

const MAGIC: &[u8; 8] = b"RBTGCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best_metric: Option<f64>,
    pub best_epoch: usize,
    pub epochs_since_best: usize,
    pub best_model: Option<ModelState>,
}

/// Full training state at an epoch boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: StageKind,
    pub epochs_done: usize,
    pub finished: bool,
    pub config_fingerprint: String,
    pub precision: Precision,
    pub seed: u64,
    pub model: ModelState,
    pub optimizer: AdamState,
    pub early_stop: Option<EarlyStopState>,
    /// Digests of the frozen collections when the stage began.
    pub frozen_digests: BTreeMap<Collection, String>,
    pub log: Vec<EpochRecord>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let payload = serde_json::to_vec(ckpt).expect("checkpoint serializes");
    let mut out = Vec::with_capacity(payload.len() + 52);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| TrainError::CorruptCheckpoint(m.to_string());
    if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(corrupt(&format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 20 + len + 32 {
        return Err(corrupt("truncated or padded file"));
    }
    let payload = &bytes[20..20 + len];
    if Sha256::digest(payload).as_slice() != &bytes[20 + len..] {
        return Err(corrupt("checksum mismatch"));
    }
    serde_json::from_slice(payload).map_err(|e| corrupt(&format!("unreadable payload: {e}")))
}

/// Writes via a temporary file and rename, so a crash never leaves a
/// half-written checkpoint behind.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(&encode(ckpt)).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(TrainError::MissingCheckpoint(path.display().to_string()));
    }
    decode(&fs::read(path).map_err(io(path))?)
}
