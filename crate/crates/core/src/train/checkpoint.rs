//! Binary checkpoint format.
//!
//! ```text
//! "EMNX" | u32 version | u32 count
//! count × ( u16 name_len | name | u8 dtype | u8 rank | u32 dims[rank] | payload )
//! u32 json_len | json metadata
//! ```
//!
//! All integers and payloads are little-endian; dtype 0 is `f32`. Optimizer
//! moments are stored as `optim/m/<name>` and `optim/v/<name>`, EMA shadows
//! as `ema/<name>`.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use emonext_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::ema::EmaState;
use super::optim::{decays, AdamWConfig, OptimState};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"EMNX";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub step: u64,
    pub seed: u64,
    pub epoch: usize,
    pub val_acc: f64,
    /// Which split `val_acc` was measured on.
    pub val_split: String,
    pub optim: Option<AdamWConfig>,
    pub ema_decay: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ParamStore<f32>,
    pub optim: Option<OptimState<f32>>,
    pub ema: Option<EmaState<f32>>,
    pub meta: CheckpointMeta,
}

impl TrainState {
    /// The weights used for evaluation: the EMA shadow when present.
    pub fn eval_params(&self) -> &ParamStore<f32> {
        self.ema.as_ref().map_or(&self.params, |e| &e.shadow)
    }
}

fn write_tensor<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f32]) -> std::io::Result<()> {
    let bytes = name.as_bytes();
    w.write_u16::<LittleEndian>(bytes.len() as u16)?;
    w.write_all(bytes)?;
    w.write_u8(DTYPE_F32)?;
    w.write_u8(shape.len() as u8)?;
    for &d in shape {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in data {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let mut entries: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    for (name, t) in state.params.iter() {
        entries.push((name.to_string(), t.shape().to_vec(), t.to_vec()));
    }
    if let Some(o) = &state.optim {
        for (i, name) in o.names.iter().enumerate() {
            let shape = state.params.get(name)?.shape().to_vec();
            entries.push((format!("optim/m/{name}"), shape.clone(), o.m[i].clone()));
            entries.push((format!("optim/v/{name}"), shape, o.v[i].clone()));
        }
    }
    if let Some(e) = &state.ema {
        for (name, t) in e.shadow.iter() {
            entries.push((format!("ema/{name}"), t.shape().to_vec(), t.to_vec()));
        }
    }
    let mut meta = state.meta.clone();
    if let Some(o) = &state.optim {
        meta.step = o.step;
        meta.optim = Some(o.config);
    }
    meta.ema_decay = state.ema.as_ref().map(|e| e.decay);

    let mut out = Vec::new();
    let io = |e: std::io::Error| Error::Format(e.to_string());
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    out.write_u32::<LittleEndian>(entries.len() as u32).map_err(io)?;
    for (name, shape, data) in &entries {
        if name.len() > u16::MAX as usize || shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!("tensor `{name}` cannot be encoded")));
        }
        write_tensor(&mut out, name, shape, data).map_err(io)?;
    }
    let json = serde_json::to_vec(&meta).map_err(|e| Error::Format(e.to_string()))?;
    out.write_u32::<LittleEndian>(json.len() as u32).map_err(io)?;
    out.extend_from_slice(&json);
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, state: &TrainState) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(state)?;
    // write-then-rename so a crash never leaves a half-written checkpoint
    let tmp = path.with_extension("emnx.tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, None)
}

/// Loads a checkpoint that must fit `config`; a parameter of the wrong
/// shape is reported by name before its payload is read.
pub fn load_checkpoint_for(path: impl AsRef<Path>, config: &ModelConfig) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, Some(config))
}

fn truncated(_: std::io::Error) -> Error {
    Error::Format("file is truncated".into())
}

pub fn decode(bytes: &[u8], expect: Option<&ModelConfig>) -> Result<TrainState> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"EMNX\"")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version} (expected {VERSION})")));
    }
    let expected = match expect {
        Some(c) => Some(c.param_specs()?),
        None => None,
    };
    let count = r.read_u32::<LittleEndian>().map_err(truncated)?;
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    for _ in 0..count {
        let len = r.read_u16::<LittleEndian>().map_err(truncated)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let dtype = r.read_u8().map_err(truncated)?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("tensor `{name}` has unknown dtype {dtype}")));
        }
        let rank = r.read_u8().map_err(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>().map_err(truncated)? as usize);
        }
        if let Some(specs) = &expected {
            if let Some(spec) = specs.iter().find(|s| s.name == name) {
                if spec.shape != shape {
                    return Err(Error::ShapeMismatch {
                        name,
                        expected: spec.shape.clone(),
                        found: shape,
                    });
                }
            }
        }
        let n: usize = shape.iter().product();
        let remaining = bytes.len() - r.position() as usize;
        if n.checked_mul(4).is_none_or(|b| b > remaining) {
            return Err(Error::Format("file is truncated".into()));
        }
        let mut data = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut data).map_err(truncated)?;
        tensors.push((name, shape, data));
    }
    let json_len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let start = r.position() as usize;
    let json = bytes.get(start..start + json_len).ok_or_else(|| Error::Format("file is truncated".into()))?;
    if start + json_len != bytes.len() {
        return Err(Error::Format("trailing bytes after metadata".into()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(json).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    assemble(tensors, meta)
}

fn assemble(tensors: Vec<(String, Vec<usize>, Vec<f32>)>, meta: CheckpointMeta) -> Result<TrainState> {
    let mut params = ParamStore::new();
    let mut shadow = ParamStore::new();
    let mut moments: Vec<(String, Vec<f32>)> = Vec::new();
    for (name, shape, data) in tensors {
        if let Some(rest) = name.strip_prefix("ema/") {
            shadow.insert(rest, Tensor::from_vec(data, &shape)?);
        } else if name.starts_with("optim/") {
            moments.push((name, data));
        } else {
            params.insert(name, Tensor::from_vec(data, &shape)?.with_requires_grad(true));
        }
    }
    let optim = match meta.optim {
        Some(config) => {
            let mut by_name: std::collections::HashMap<String, Vec<f32>> = moments.into_iter().collect();
            let mut o = OptimState::new(&params, config);
            o.step = meta.step;
            for (i, name) in o.names.clone().iter().enumerate() {
                let mut take = |kind: &str| {
                    let key = format!("optim/{kind}/{name}");
                    by_name.remove(&key).ok_or_else(|| Error::Format(format!("missing `{key}`")))
                };
                o.m[i] = take("m")?;
                o.v[i] = take("v")?;
                o.decay[i] = decays(params.get(name)?.shape());
            }
            Some(o)
        }
        None => None,
    };
    let ema = meta.ema_decay.map(|decay| EmaState { decay, shadow });
    Ok(TrainState { params, optim, ema, meta })
}
