use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lanekit::lane::LaneRecord;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const PREDICTION_SCHEMA: u32 = 1;

/// Index file of a prediction directory; lanes live in `<scene>/lanes.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub schema_version: u32,
    pub source: String,
    pub y_samples: Vec<f64>,
    pub scenes: Vec<String>,
}

pub fn require(p: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    p.ok_or_else(|| CliError::Config(format!("missing {what}")))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes through a temporary sibling and renames, so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.flush()).map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn json_bytes<S: Serialize>(v: &S) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

pub fn write_json<S: Serialize>(path: &Path, v: &S) -> Result<(), CliError> {
    write_atomic(path, &json_bytes(v))
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D, CliError> {
    let text = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    write_atomic(&dir.join("config.json"), &cfg.to_json())
}

pub fn read_predictions(dir: &Path) -> Result<(PredictionSet, Vec<Vec<LaneRecord>>), CliError> {
    let set: PredictionSet = read_json(&dir.join("predictions.json"))?;
    if set.schema_version != PREDICTION_SCHEMA {
        return Err(CliError::Data(format!("unsupported prediction schema {}", set.schema_version)));
    }
    let lanes = set.scenes.iter().map(|s| read_json(&dir.join(s).join("lanes.json"))).collect::<Result<_, _>>()?;
    Ok((set, lanes))
}

pub fn write_predictions(dir: &Path, set: &PredictionSet, lanes: &[Vec<LaneRecord>]) -> Result<(), CliError> {
    use rayon::prelude::*;
    ensure_dir(dir)?;
    set.scenes
        .par_iter()
        .zip(lanes.par_iter())
        .try_for_each(|(name, l)| write_json(&dir.join(name).join("lanes.json"), l))?;
    write_json(&dir.join("predictions.json"), set)
}
