//! Binary checkpoint format shared by pre-training and fine-tuning.
//!
//! Layout: magic `SKMAE1`, a little-endian u32 byte length, a JSON metadata
//! block (format version, model kind, config snapshot, progress counters,
//! ordered tensor descriptors), then every tensor's values as little-endian
//! 32-bit floats concatenated in descriptor order. Everything that affects
//! a forward pass lives in the payload, so save → load reproduces outputs
//! bitwise in 32-bit mode.

use crate::config::RunConfig;
use crate::error::{io_err, Error, Result};
use crate::numerics::{ParamStore, Scalar};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"SKMAE1";
pub const FORMAT_VERSION: u32 = 1;

/// Model kind tags stored in the metadata block.
pub const KIND_PRETRAIN: &str = "mae";
pub const KIND_CLASSIFIER: &str = "ssl";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDescriptor {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: String,
    pub config: RunConfig,
    pub epochs_completed: usize,
    /// Optimizer step counter, for bitwise training resume.
    pub optimizer_steps: usize,
    pub tensors: Vec<TensorDescriptor>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    values: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.meta
            .tensors
            .iter()
            .position(|d| d.name == name)
            .map(|i| (self.meta.tensors[i].shape.as_slice(), self.values[i].as_slice()))
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.meta.tensors.iter().map(|d| d.name.as_str())
    }
}

/// Converts a parameter store to the descriptor-ordered f32 tensor list.
/// Exact for f32 stores; wider scalars are truncated to the file precision.
pub fn store_tensors<T: Scalar>(store: &ParamStore<T>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    store
        .iter()
        .map(|(_, p)| {
            (
                p.name.clone(),
                p.shape.clone(),
                p.data.iter().map(|v| v.widen() as f32).collect(),
            )
        })
        .collect()
}

pub fn write_checkpoint(
    path: &Path,
    kind: &str,
    config: &RunConfig,
    epochs_completed: usize,
    optimizer_steps: usize,
    tensors: &[(String, Vec<usize>, Vec<f32>)],
) -> Result<()> {
    for (name, shape, data) in tensors {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        config: config.clone(),
        epochs_completed,
        optimizer_steps,
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorDescriptor {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let meta_json = serde_json::to_vec(&meta)
        .map_err(|e| Error::Checkpoint(format!("metadata serialize: {e}")))?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| io_err(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(meta_json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&meta_json).map_err(io)?;
    for (_, _, data) in tensors {
        for v in data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let fail = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail("not a checkpoint (bad magic)".into()));
    }
    let meta_len =
        u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let payload_start = 10 + meta_len;
    if bytes.len() < payload_start {
        return Err(fail(format!(
            "metadata length {meta_len} exceeds file size {}",
            bytes.len()
        )));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[10..payload_start])
        .map_err(|e| fail(format!("metadata parse: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(fail(format!(
            "format version {} unsupported (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    let expected: usize = meta
        .tensors
        .iter()
        .map(|d| d.shape.iter().product::<usize>())
        .sum();
    let payload = &bytes[payload_start..];
    if payload.len() != expected * 4 {
        return Err(fail(format!(
            "payload holds {} bytes, descriptors require {}",
            payload.len(),
            expected * 4
        )));
    }
    let mut values = Vec::with_capacity(meta.tensors.len());
    let mut cursor = 0usize;
    for desc in &meta.tensors {
        let numel: usize = desc.shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let v = f32::from_le_bytes(
                payload[cursor..cursor + 4].try_into().expect("4 bytes"),
            );
            if !v.is_finite() {
                return Err(fail(format!("tensor {} holds a non-finite value", desc.name)));
            }
            data.push(v);
            cursor += 4;
        }
        values.push(data);
    }
    Ok(Checkpoint { meta, values })
}

/// Loads every store parameter from the checkpoint by exact name, erroring
/// on anything missing or shape-mismatched. Checkpoint-side extras are
/// allowed only under the optimizer namespace `opt.`.
pub fn load_store_exact<T: Scalar>(ckpt: &Checkpoint, store: &mut ParamStore<T>) -> Result<()> {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let name = store.name(id).to_string();
        let shape = store.shape(id).to_vec();
        let (ck_shape, data) = ckpt.tensor(&name).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint lacks tensor {name}"))
        })?;
        if ck_shape != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: checkpoint shape {ck_shape:?} does not match model shape {shape:?}"
            )));
        }
        let values: Vec<T> = data.iter().map(|&v| T::from_f64(v as f64)).collect();
        store.set_data(id, &values)?;
    }
    for name in ckpt.tensor_names() {
        if !name.starts_with("opt.") && store.find(name).is_none() {
            return Err(Error::Checkpoint(format!(
                "checkpoint tensor {name} has no place in this model"
            )));
        }
    }
    Ok(())
}
