//! Single-file model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | field        | size             |
//! |--------------|------------------|
//! | magic        | 8 bytes `DOCIECKP` |
//! | version      | u32              |
//! | header size  | u64              |
//! | header       | UTF-8 JSON ([`CheckpointHeader`]) |
//! | tensors      | raw values of each entry in `header.params`, in order |

use std::fs;
use std::io::Write;
use std::path::Path;

use docie_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{EntitySchema, Vocabulary};
use crate::error::{Error, Result};
use crate::model::DocModel;
use crate::nn::Module;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"DOCIECKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

/// Seed and position needed to continue the training random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub vocab: Vocabulary,
    pub schema: EntitySchema,
    pub train: Option<TrainConfig>,
    pub epoch: usize,
    pub rng: RngState,
    pub params: Vec<ParamEntry>,
}

/// Metadata stored next to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub train: Option<TrainConfig>,
    pub epoch: usize,
    pub rng: RngState,
}

pub fn to_bytes<T: Real>(model: &DocModel<T>, state: &TrainingState) -> Result<Vec<u8>> {
    let named = model.named_params();
    let header = CheckpointHeader {
        model: model.config.clone(),
        vocab: model.vocab.clone(),
        schema: model.schema.clone(),
        train: state.train.clone(),
        epoch: state.epoch,
        rng: state.rng,
        params: named.iter().map(|(n, t)| ParamEntry { name: n.clone(), dtype: T::DTYPE.into(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 20 + model.num_params() * std::mem::size_of::<T>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        t.data().iter().for_each(|v| v.to_le_bytes_vec(&mut out));
    }
    Ok(out)
}

pub fn save<T: Real>(path: &Path, model: &DocModel<T>, state: &TrainingState) -> Result<()> {
    let bytes = to_bytes(model, state)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!("truncated while reading {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn dtype_size(dtype: &str) -> Result<usize> {
    match dtype {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

fn decode_value<T: Real>(dtype: &str, chunk: &[u8]) -> T {
    if dtype == T::DTYPE {
        T::from_le_slice(chunk)
    } else if dtype == "f32" {
        T::c(f32::from_le_slice(chunk) as f64)
    } else {
        T::c(f64::from_le_slice(chunk))
    }
}

/// Parses the header without touching the tensors.
pub fn read_header(mut bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let b = &mut bytes;
    if take(b, 8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(take(b, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let len = u64::from_le_bytes(take(b, 8, "header size")?.try_into().expect("8 bytes")) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(b, len, "header")?)
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    Ok((header, bytes))
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<(DocModel<T>, TrainingState)> {
    let (header, mut rest) = read_header(bytes)?;
    let mut model = DocModel::<T>::new(header.model.clone(), header.vocab.clone(), header.schema.clone(), 0)?;
    {
        let mut slots = model.named_params_mut();
        if slots.len() != header.params.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", slots.len(), header.params.len())));
        }
        for ((name, slot), entry) in slots.iter_mut().zip(&header.params) {
            if *name != entry.name || slot.shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match model tensor {name} {:?}",
                    entry.name,
                    entry.shape,
                    slot.shape()
                )));
            }
            let size = dtype_size(&entry.dtype)?;
            let n: usize = entry.shape.iter().product();
            let raw = take(&mut rest, n * size, &entry.name)?;
            let data: Vec<T> = raw.chunks_exact(size).map(|c| decode_value(&entry.dtype, c)).collect();
            **slot = Tensor::param(data, &entry.shape);
        }
    }
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok((model, TrainingState { train: header.train, epoch: header.epoch, rng: header.rng }))
}

pub fn load<T: Real>(path: &Path) -> Result<(DocModel<T>, TrainingState)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
