use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::error::{Error, Result};
use crate::net::{GradientSet, NetworkParams, NetworkShape};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PISENSE1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    shape: NetworkShape,
    step: u64,
    num_params: usize,
    config: Option<TrainConfig>,
}

/// Parameters and optimizer state restored from disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub state: AdamState,
    pub config: Option<TrainConfig>,
}

/// Writes `magic | u64 LE header length | JSON header | f64 LE payload`, where
/// the payload holds the parameters, then Adam's first and second moments,
/// each in tensor declaration order.
pub fn save_checkpoint(path: &Path, params: &NetworkParams, state: &AdamState, config: Option<&TrainConfig>) -> Result<()> {
    if !state.m.congruent_with(params) || !state.v.congruent_with(params) {
        return Err(Error::CheckpointShape("optimizer state does not match parameters".into()));
    }
    let n = params.num_params();
    let header = Header {
        version: CHECKPOINT_VERSION,
        shape: params.shape,
        step: state.step,
        num_params: n,
        config: config.cloned(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(16 + json.len() + 24 * n);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for set in [params, state.m.as_params(), state.v.as_params()] {
        for (_, t) in set.tensors() {
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint. With `expected` set, a file for any other network
/// shape is rejected with [`Error::CheckpointShape`].
pub fn load_checkpoint(path: &Path, expected: Option<&NetworkShape>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fmt("missing checkpoint magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let hend = 16u64
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| fmt("truncated header".into()))? as usize;
    let header: Header = serde_json::from_slice(&bytes[16..hend]).map_err(|e| fmt(format!("bad header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(fmt(format!("version {} is not supported", header.version)));
    }
    header.shape.validate().map_err(|e| fmt(format!("bad shape: {e}")))?;
    if let Some(want) = expected {
        if *want != header.shape {
            return Err(Error::CheckpointShape(format!("file holds {:?}, expected {:?}", header.shape, want)));
        }
    }
    let mut params = NetworkParams::zeros(header.shape)?;
    let n = params.num_params();
    if header.num_params != n {
        return Err(fmt(format!("header lists {} parameters, shape implies {n}", header.num_params)));
    }
    let payload = &bytes[hend..];
    let want = 3 * n * 8;
    if payload.len() != want {
        return Err(fmt(format!("payload is {} bytes, expected {want}", payload.len())));
    }
    let mut m = GradientSet::zeros_like(&params);
    let mut v = GradientSet::zeros_like(&params);
    let mut words = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for tensors in [params.tensors_mut(), m.tensors_mut(), v.tensors_mut()] {
        for t in tensors {
            for x in t.iter_mut() {
                *x = words.next().expect("length checked");
            }
        }
    }
    params.validate().map_err(|e| fmt(format!("bad parameters: {e}")))?;
    Ok(Checkpoint {
        params,
        state: AdamState { m, v, step: header.step },
        config: header.config,
    })
}
