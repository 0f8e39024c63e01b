//! Checkpoint container.
//!
//! ```text
//! magic   8 bytes  "DNGSCKPT"
//! version u32 LE   1
//! hlen    u64 LE   length of the JSON header
//! header  hlen bytes of UTF-8 JSON
//! data    raw little-endian tensors of the header's dtype
//! ```
//!
//! The header echoes the full experiment config and records the iteration,
//! the optimizer step, the metric history and, for every tensor, its name,
//! shape and byte offset into `data`. Model weights are listed first, then
//! the Adam moments under `adam.m.` and `adam.v.` prefixes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::{GaussianModel, Weights};
use crate::optim::Adam;
use crate::scalar::Real;
use crate::train::{StepRecord, TrainState};

const MAGIC: &[u8; 8] = b"DNGSCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dtype: String,
    iteration: u64,
    adam_step: u64,
    clean_branch_runs: u64,
    height: usize,
    width: usize,
    config: ExperimentConfig,
    tensors: Vec<TensorEntry>,
    history: Vec<StepRecord>,
}

pub fn save_checkpoint<T: Real>(path: &Path, state: &TrainState<T>, cfg: &ExperimentConfig) -> Result<()> {
    let mut data = Vec::new();
    let mut tensors = Vec::new();
    let groups = [("", &state.model.weights), ("adam.m.", &state.adam.m), ("adam.v.", &state.adam.v)];
    for (prefix, w) in groups {
        for (name, shape, values) in w.tensors() {
            let bytes = T::to_le_bytes_vec(values);
            tensors.push(TensorEntry { name: format!("{prefix}{name}"), shape, offset: data.len(), len: values.len() });
            data.extend_from_slice(&bytes);
        }
    }
    let header = Header {
        dtype: T::DTYPE.to_string(),
        iteration: state.iteration,
        adam_step: state.adam.step,
        clean_branch_runs: state.clean_branch_runs,
        height: state.model.height,
        width: state.model.width,
        config: cfg.clone(),
        tensors,
        history: state.history.clone(),
    };
    let h = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(20 + h.len() + data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(h.len() as u64).to_le_bytes());
    buf.extend_from_slice(&h);
    buf.extend_from_slice(&data);
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            fs::create_dir_all(p)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn decode<T: Real>(dtype: &str, bytes: &[u8]) -> Option<Vec<T>> {
    match dtype {
        "f32" => f32::from_le_bytes_slice(bytes).map(|v| v.into_iter().map(|x| T::of(x as f64)).collect()),
        "f64" => f64::from_le_bytes_slice(bytes).map(|v| v.into_iter().map(T::of).collect()),
        _ => None,
    }
}

/// Loads a checkpoint, converting tensors to `T` if they were saved in the
/// other precision.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(ExperimentConfig, TrainState<T>)> {
    let buf = fs::read(path).map_err(|e| Error::load(path, e))?;
    if buf.len() < 20 || &buf[..8] != MAGIC {
        return Err(Error::load(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::load(path, format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
    let header_bytes = buf.get(20..20 + hlen).ok_or_else(|| Error::load(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| Error::load(path, e))?;
    let data = &buf[20 + hlen..];
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        d => return Err(Error::load(path, format!("unknown dtype {d}"))),
    };
    let cfg = header.config.clone();
    let mut model = GaussianModel::<T>::new(cfg.model.clone(), header.height, header.width, cfg.seed)
        .map_err(|e| Error::load(path, e))?;
    let mut adam = Adam::new(&model.weights);
    let mut entries = header.tensors.iter();
    let mut fill = |prefix: &str, w: &mut Weights<T>| -> Result<()> {
        let names: Vec<(String, Vec<usize>)> = w.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        for ((name, shape), dst) in names.into_iter().zip(w.tensors_mut()) {
            let e = entries.next().ok_or_else(|| Error::load(path, "missing tensors"))?;
            if e.name != format!("{prefix}{name}") || e.shape != shape || e.len != dst.len() {
                return Err(Error::load(path, format!("tensor {} does not match {prefix}{name} {shape:?}", e.name)));
            }
            let bytes = data
                .get(e.offset..e.offset + e.len * width)
                .ok_or_else(|| Error::load(path, format!("tensor {} runs past the end of the file", e.name)))?;
            let values = decode::<T>(&header.dtype, bytes).ok_or_else(|| Error::load(path, "bad tensor data"))?;
            dst.copy_from_slice(&values);
        }
        Ok(())
    };
    fill("", &mut model.weights)?;
    fill("adam.m.", &mut adam.m)?;
    fill("adam.v.", &mut adam.v)?;
    adam.step = header.adam_step;
    let state = TrainState {
        model,
        adam,
        iteration: header.iteration,
        history: header.history,
        clean_branch_runs: header.clean_branch_runs,
    };
    Ok((cfg, state))
}
