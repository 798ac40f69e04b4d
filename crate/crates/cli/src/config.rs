//! Run configuration. Values come from built-in defaults, then an optional
//! TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use lanekit::anchor::AnchorGridConfig;
use lanekit::eval::{EvalConfig, OnceConfig};
use lanekit::ewc::EwcConfig;
use lanekit::head::{FusionStrategy, TrainConfig};
use lanekit::synth::{ChannelSpec, SceneProfile};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub scenes: usize,
    pub profile: SceneProfile,
    /// Hide random lane spans and zero the features there.
    pub occlusion: bool,
    /// Emit a previous frame for every scene.
    pub temporal: bool,
    pub val_fraction: f64,
    /// Ego displacement between the two frames of a temporal sample, meters.
    pub speed_range: (f64, f64),
    pub channels: ChannelSpec,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            scenes: 200,
            profile: SceneProfile::FlatCurved,
            occlusion: false,
            temporal: false,
            val_fraction: 0.2,
            speed_range: (3.0, 8.0),
            channels: ChannelSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSection {
    #[serde(flatten)]
    pub config: TrainConfig,
    /// Number of regression passes (one head each).
    pub passes: usize,
    pub fusion: Option<FusionStrategy>,
}

#[derive(Deserialize)]
struct TrainFields {
    #[serde(flatten)]
    config: TrainConfig,
    passes: usize,
    fusion: Option<FusionStrategy>,
}

/// Keys missing from a `[train]` table keep the desk preset, not the library defaults.
impl<'de> Deserialize<'de> for TrainSection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let given = serde_json::Map::deserialize(d)?;
        let serde_json::Value::Object(mut table) = serde_json::to_value(Self::default()).map_err(D::Error::custom)? else {
            unreachable!("a struct serializes to an object")
        };
        if let Some(k) = given.keys().find(|k| !table.contains_key(*k)) {
            return Err(D::Error::custom(format!("unknown train key `{k}`")));
        }
        table.extend(given);
        let f: TrainFields = serde_json::from_value(table.into()).map_err(D::Error::custom)?;
        Ok(Self { config: f.config, passes: f.passes, fusion: f.fusion })
    }
}

/// Desk-scale schedule used by the command-line tool.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        lambda_cls: 100.0,
        hidden: 128,
        epochs: 40,
        lr_decay_epoch: Some(30),
        ..TrainConfig::default()
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { config: desk_train_config(), passes: 1, fusion: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    /// Regression passes to run; `None` uses every head in the checkpoint.
    pub iters: Option<usize>,
    pub temporal: bool,
    pub nms_threshold: f64,
    pub min_score: f64,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self { iters: None, temporal: false, nms_threshold: 2.0, min_score: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Standard,
    Once,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub protocol: Protocol,
    pub standard: EvalConfig,
    pub once: OnceConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { protocol: Protocol::Both, standard: EvalConfig::default(), once: OnceConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSection,
    pub anchor: AnchorGridConfig<f64>,
    pub train: TrainSection,
    pub predict: PredictSection,
    pub ewc: EwcConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            synth: SynthSection::default(),
            anchor: AnchorGridConfig::default(),
            train: TrainSection::default(),
            predict: PredictSection::default(),
            ewc: EwcConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.train.config.validate().map_err(|e| cfg(&e))?;
        self.ewc.validate().map_err(|e| cfg(&e))?;
        self.eval.standard.validate().map_err(|e| cfg(&e))?;
        self.synth.channels.validate().map_err(|e| cfg(&e))?;
        self.anchor.start_positions().map_err(|e| cfg(&e))?;
        self.anchor.y_sampling().map_err(|e| cfg(&e))?;
        if self.train.passes == 0 {
            return Err(CliError::Config("train.passes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.synth.val_fraction) {
            return Err(CliError::Config("synth.val_fraction must be in [0, 1)".into()));
        }
        let (lo, hi) = self.synth.speed_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(CliError::Config("synth.speed_range must be an ordered finite pair".into()));
        }
        if self.predict.iters == Some(0) {
            return Err(CliError::Config("predict.iters must be at least 1".into()));
        }
        Ok(())
    }

    /// Pretty JSON echo written next to every command's outputs.
    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("config serializes");
        v.push(b'\n');
        v
    }
}
