//! On-disk datasets: `scene_%04d/{camera.json, lanes.json, features.a3lf, pose.json}`
//! plus a `manifest.json` listing the scenes and the y-sampling.

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Scene;
use crate::anchor::YSampling;
use crate::geometry::{CameraRig, RigidTransform};
use crate::lane::LaneRecord;
use crate::sampling::{FeatureMap, FeatureMapError};

pub const DATASET_SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Features { path: PathBuf, source: FeatureMapError },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    /// Directory name of the previous frame when the scene is part of a sequence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub y_samples: Vec<f64>,
    pub channels: usize,
    pub scenes: Vec<ManifestEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    pose_to_prev: Option<RigidTransform<f64>>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` next to `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let tmp = path.with_extension("partial");
    {
        let mut f = BufWriter::new(fs::File::create(&tmp).map_err(io_err(&tmp))?);
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn json_bytes<S: Serialize>(v: &S) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D, DatasetError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|source| DatasetError::Json { path: path.to_path_buf(), source })
}

pub fn write_scene(dir: &Path, scene: &Scene<f64>) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_atomic(&dir.join("camera.json"), &json_bytes(&scene.rig))?;
    let lanes: Vec<LaneRecord> = scene.gt.iter().map(|l| LaneRecord::from_lane(l, &scene.ys)).collect();
    write_atomic(&dir.join("lanes.json"), &json_bytes(&lanes))?;
    write_atomic(&dir.join("features.a3lf"), &scene.feature_map.to_bytes())?;
    write_atomic(&dir.join("pose.json"), &json_bytes(&PoseFile { pose_to_prev: scene.pose_to_prev }))
}

pub fn read_scene(dir: &Path, ys: &YSampling<f64>) -> Result<Scene<f64>, DatasetError> {
    let rig: CameraRig<f64> = read_json(&dir.join("camera.json"))?;
    let records: Vec<LaneRecord> = read_json(&dir.join("lanes.json"))?;
    let gt = records
        .iter()
        .map(|r| r.to_lane(ys))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DatasetError::Invalid(format!("{}: {e}", dir.join("lanes.json").display())))?;
    let fpath = dir.join("features.a3lf");
    let f = fs::File::open(&fpath).map_err(io_err(&fpath))?;
    let feature_map =
        FeatureMap::read_from(BufReader::new(f)).map_err(|source| DatasetError::Features { path: fpath.clone(), source })?;
    if feature_map.height() != rig.dims.h_f || feature_map.width() != rig.dims.w_f {
        return Err(DatasetError::Invalid(format!("{}: grid does not match camera.json", fpath.display())));
    }
    let pose: PoseFile = read_json(&dir.join("pose.json"))?;
    Ok(Scene { rig, ys: ys.clone(), gt, feature_map, pose_to_prev: pose.pose_to_prev })
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<(), DatasetError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    write_atomic(&root.join("manifest.json"), &json_bytes(manifest))
}

pub fn read_manifest(root: &Path) -> Result<Manifest, DatasetError> {
    let m: Manifest = read_json(&root.join("manifest.json"))?;
    if m.schema_version != DATASET_SCHEMA {
        return Err(DatasetError::Invalid(format!("unsupported dataset schema {}", m.schema_version)));
    }
    Ok(m)
}

/// Loads the manifest and every scene it lists, in order.
pub fn read_dataset(root: &Path) -> Result<(Manifest, Vec<Scene<f64>>), DatasetError> {
    let m = read_manifest(root)?;
    let ys = YSampling::new(m.y_samples.clone()).map_err(|e| DatasetError::Invalid(e.to_string()))?;
    let scenes = m.scenes.iter().map(|e| read_scene(&root.join(&e.name), &ys)).collect::<Result<Vec<_>, _>>()?;
    Ok((m, scenes))
}
