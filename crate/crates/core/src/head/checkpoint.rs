use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{FeatureMap, FeatureMapError};
use crate::scalar::Real;

use super::fusion::{FusionParams, FusionStrategy};
use super::optim::Model;
use super::{HeadError, HeadParams, HeadShape, TrainConfig};

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint tensor: {0}")]
    Tensor(#[from] FeatureMapError),
    #[error("checkpoint layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Head(#[from] HeadError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// First line of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub shape: HeadShape,
    pub iterations: usize,
    pub fusion: Option<FusionStrategy>,
    pub config: TrainConfig,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
    /// Free-form settings the caller needs to rebuild inputs (anchor grid, channels, …).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Trained heads, one per refinement pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: TrainConfig,
    pub models: Vec<Model<T>>,
    pub metadata: serde_json::Value,
}

fn tensor_list<T: Real>(models: &[Model<T>]) -> Vec<(String, usize, usize, Vec<T>)> {
    let mut out = Vec::new();
    for (i, m) in models.iter().enumerate() {
        for (name, rows, cols, data) in m.head.tensors() {
            out.push((format!("iter{i}.{name}"), rows, cols, data.to_vec()));
        }
        if let Some(f) = &m.fusion {
            let v = f.values();
            out.push((format!("iter{i}.fusion"), v.len(), 1, v.to_vec()));
        }
    }
    out
}

/// Writes a one-line JSON header followed by one float32 block per tensor.
pub fn write_checkpoint<T: Real, W: Write>(mut w: W, ckpt: &Checkpoint<T>) -> Result<(), CheckpointError> {
    let first = ckpt.models.first().ok_or_else(|| CheckpointError::Layout("no models".into()))?;
    let shape = first.head.shape();
    let fusion = first.fusion.as_ref().map(|f| f.strategy);
    if ckpt.models.iter().any(|m| m.head.shape() != shape || m.fusion.as_ref().map(|f| f.strategy) != fusion) {
        return Err(CheckpointError::Layout("all passes must share shape and fusion".into()));
    }
    let tensors = tensor_list(&ckpt.models);
    let header = CheckpointHeader {
        schema_version: CHECKPOINT_SCHEMA,
        shape,
        iterations: ckpt.models.len(),
        fusion,
        config: ckpt.config.clone(),
        seed: ckpt.config.seed,
        tensors: tensors.iter().map(|(n, r, c, _)| TensorEntry { name: n.clone(), rows: *r, cols: *c }).collect(),
        metadata: ckpt.metadata.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (_, rows, cols, data) in tensors {
        FeatureMap::new(rows, cols, 1, data)?.write_to(&mut w)?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Real, R: BufRead>(mut r: R) -> Result<Checkpoint<T>, CheckpointError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    if header.schema_version != CHECKPOINT_SCHEMA {
        return Err(CheckpointError::Layout(format!("unsupported schema {}", header.schema_version)));
    }
    let mut blocks = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let fm = FeatureMap::<T>::read_from(&mut r)?;
        if fm.height() != entry.rows || fm.width() != entry.cols || fm.channels() != 1 {
            return Err(CheckpointError::Layout(format!("tensor {} has wrong dimensions", entry.name)));
        }
        blocks.push(fm.data().to_vec());
    }
    let mut blocks = blocks.into_iter();
    let mut models = Vec::with_capacity(header.iterations);
    for _ in 0..header.iterations {
        let mut values = Vec::with_capacity(header.shape.param_count());
        for _ in 0..8 {
            values.extend(blocks.next().ok_or_else(|| CheckpointError::Layout("missing tensor".into()))?);
        }
        let head = HeadParams::from_values(header.shape, values)?;
        let fusion = match header.fusion {
            Some(st) => {
                let v = blocks.next().ok_or_else(|| CheckpointError::Layout("missing fusion tensor".into()))?;
                Some(FusionParams::from_values(st, header.shape.n_points, header.shape.channels, v)?)
            }
            None => None,
        };
        models.push(Model { head, fusion });
    }
    Ok(Checkpoint { config: header.config, models, metadata: header.metadata })
}
