//! Checkpoint container.
//!
//! ```text
//! b"LVSEGCKP" | u32 version | u64 manifest length | manifest JSON | f64 LE blob
//! ```
//!
//! The blob holds every parameter, then every running statistic, each in
//! manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EpochRecord, TrainConfig};
use crate::model::{build, ModelState, UNetSpec};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"LVSEGCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint header truncated")]
    TruncatedHeader,
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("parameter {name}: manifest shape {found:?} does not match architecture shape {expected:?}")]
    ShapeMismatch { name: String, expected: [usize; 4], found: [usize; 4] },
    #[error("parameter table mismatch: {0}")]
    ParameterTable(String),
    #[error("blob length mismatch: manifest declares {expected} bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },
}

impl CheckpointError {
    pub fn kind(&self) -> &'static str {
        match self {
            CheckpointError::Magic => "checkpoint_magic",
            CheckpointError::Version { .. } => "checkpoint_version",
            CheckpointError::TruncatedHeader => "checkpoint_truncated_header",
            CheckpointError::Manifest(_) => "checkpoint_manifest",
            CheckpointError::ShapeMismatch { .. } => "checkpoint_shape_mismatch",
            CheckpointError::ParameterTable(_) => "checkpoint_parameter_table",
            CheckpointError::LengthMismatch { .. } => "checkpoint_length_mismatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub name: String,
    pub shape: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: UNetSpec,
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub params: Vec<TableEntry>,
    pub buffers: Vec<TableEntry>,
    /// Number of f64 values in the blob.
    pub total_values: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: ModelState,
}

fn table(items: &[(String, Tensor)]) -> Vec<TableEntry> {
    items.iter().map(|(n, t)| TableEntry { name: n.clone(), shape: t.shape().to_array() }).collect()
}

pub fn to_bytes(
    model: &ModelState,
    train_config: Option<&TrainConfig>,
    history: &[EpochRecord],
) -> crate::Result<Vec<u8>> {
    let buffers = model.buffers();
    let values: Vec<f64> = model.params().iter().chain(&buffers).flat_map(|(_, t)| t.data().iter().copied()).collect();
    let manifest = Manifest {
        model: model.spec.clone(),
        seed: model.seed,
        train_config: train_config.cloned(),
        epoch: history.len(),
        history: history.to_vec(),
        params: table(model.params()),
        buffers: table(&buffers),
        total_values: values.len(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::Magic);
    }
    if bytes.len() < 20 {
        return Err(CheckpointError::TruncatedHeader);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version { found: version, supported: VERSION });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let end = usize::try_from(len).ok().and_then(|l| l.checked_add(20)).filter(|&e| e <= bytes.len());
    let end = end.ok_or(CheckpointError::TruncatedHeader)?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[20..end]).map_err(|e| CheckpointError::Manifest(e.to_string()))?;

    let mut model = build(&manifest.model, manifest.seed).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.params.len() != model.params().len() {
        return Err(CheckpointError::ParameterTable(format!(
            "manifest lists {} parameters, architecture has {}",
            manifest.params.len(),
            model.params().len()
        )));
    }
    for (entry, (name, t)) in manifest.params.iter().zip(model.params()) {
        if &entry.name != name {
            return Err(CheckpointError::ParameterTable(format!("expected parameter {name}, found {}", entry.name)));
        }
        if entry.shape != t.shape().to_array() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                expected: t.shape().to_array(),
                found: entry.shape,
            });
        }
    }
    let declared: usize = manifest.params.iter().chain(&manifest.buffers).map(|e| e.shape.iter().product::<usize>()).sum();
    if declared != manifest.total_values {
        return Err(CheckpointError::Manifest(format!(
            "table declares {declared} values but total_values is {}",
            manifest.total_values
        )));
    }
    let blob = &bytes[end..];
    let expected = manifest.total_values.checked_mul(8).ok_or(CheckpointError::Manifest("total_values overflows".into()))?;
    if blob.len() != expected {
        return Err(CheckpointError::LengthMismatch { expected, found: blob.len() });
    }

    let mut values = blob.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut next = |shape: [usize; 4]| {
        let shape = Shape::from_array(shape);
        Tensor::new(shape, values.by_ref().take(shape.numel()).collect()).expect("length validated")
    };
    for i in 0..manifest.params.len() {
        let t = next(manifest.params[i].shape);
        *model.param_at_mut(i) = t;
    }
    for entry in &manifest.buffers {
        let t = next(entry.shape);
        model.set_buffer(&entry.name, t).map_err(|e| CheckpointError::ParameterTable(e.to_string()))?;
    }
    Ok(Checkpoint { manifest, model })
}

pub fn save(path: &Path, model: &ModelState, train_config: Option<&TrainConfig>, history: &[EpochRecord]) -> crate::Result<()> {
    std::fs::write(path, to_bytes(model, train_config, history)?)?;
    Ok(())
}

pub fn load(path: &Path) -> crate::Result<Checkpoint> {
    Ok(from_bytes(&std::fs::read(path)?)?)
}
