use std::collections::HashMap;
use std::path::PathBuf;

use lanekit::anchor::build_anchor_grid;
use lanekit::head::{train_model, write_checkpoint, Checkpoint, PrevFrame, SceneSample};
use lanekit::synth::{read_dataset, Manifest, Scene};
use serde_json::{json, Value};

use crate::args::TrainArgs;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::util::{echo_config, require, write_atomic, write_json};

pub fn apply(args: &TrainArgs, cfg: &mut RunConfig) {
    let t = &mut cfg.train;
    if let Some(v) = args.epochs {
        t.config.epochs = v;
        if t.config.lr_decay_epoch.is_some_and(|d| d >= v) {
            t.config.lr_decay_epoch = Some(v * 3 / 4);
        }
    }
    if let Some(v) = args.lr {
        t.config.learning_rate = v;
    }
    if let Some(v) = args.hidden {
        t.config.hidden = v;
    }
    if let Some(v) = args.lambda_cls {
        t.config.lambda_cls = v;
    }
    if let Some(v) = args.seed {
        t.config.seed = v;
    }
    if let Some(v) = args.iters {
        t.passes = v;
    }
    if args.fusion.is_some() {
        t.fusion = args.fusion;
    }
    if args.data.is_some() {
        cfg.paths.data = args.data.clone();
    }
    if args.checkpoint.is_some() {
        cfg.paths.checkpoint = args.checkpoint.clone();
    }
    if args.out.out.is_some() {
        cfg.paths.out = args.out.out.clone();
    }
}

/// Dataset entries grouped by split, each with the index of its previous frame.
pub struct Indexed {
    pub manifest: Manifest,
    pub scenes: Vec<Scene<f64>>,
    pub prev: Vec<Option<usize>>,
}

impl Indexed {
    pub fn load(root: &std::path::Path) -> Result<Self, CliError> {
        let (manifest, scenes) = read_dataset(root)?;
        let by_name: HashMap<&str, usize> = manifest.scenes.iter().enumerate().map(|(i, e)| (e.name.as_str(), i)).collect();
        let prev = manifest
            .scenes
            .iter()
            .map(|e| match &e.prev {
                None => Ok(None),
                Some(p) => {
                    let i = by_name.get(p.as_str()).copied().ok_or_else(|| CliError::Data(format!("{}: unknown previous frame {p}", e.name)))?;
                    if scenes[by_name[e.name.as_str()]].pose_to_prev.is_none() {
                        return Err(CliError::Data(format!("{}: missing pose to previous frame", e.name)));
                    }
                    Ok(Some(i))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { manifest, scenes, prev })
    }

    /// Indices in `split` (`all` selects every scene that has a split).
    pub fn split(&self, split: &str) -> Vec<usize> {
        self.manifest
            .scenes
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split.as_deref().is_some_and(|s| split == "all" || s == split))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn prev_frame(&self, i: usize) -> Option<PrevFrame<'_, f64>> {
        let p = self.prev[i]?;
        Some(PrevFrame {
            feature_map: &self.scenes[p].feature_map,
            rig: &self.scenes[p].rig,
            pose: self.scenes[i].pose_to_prev.as_ref()?,
        })
    }
}

pub fn run(cfg: &RunConfig) -> Result<Value, CliError> {
    let data = require(cfg.paths.data.clone(), "dataset directory (--data)")?;
    let ckpt_path = match (&cfg.paths.checkpoint, &cfg.paths.out) {
        (Some(c), _) => c.clone(),
        (None, Some(o)) => o.join("model.ckpt"),
        (None, None) => return Err(CliError::Config("missing --out or --checkpoint".into())),
    };
    let out: PathBuf = cfg.paths.out.clone().unwrap_or_else(|| ckpt_path.parent().map(PathBuf::from).unwrap_or_default());

    let ds = Indexed::load(&data)?;
    if ds.manifest.y_samples != cfg.anchor.y_samples {
        return Err(CliError::Config("anchor.y_samples differ from the dataset's y samples".into()));
    }
    let idx = ds.split("train");
    if idx.is_empty() {
        return Err(CliError::Data("dataset has no training scenes".into()));
    }
    let fusion = cfg.train.fusion;
    if fusion.is_some() && idx.iter().any(|&i| ds.prev[i].is_none()) {
        return Err(CliError::Config("temporal fusion needs a dataset written with --temporal".into()));
    }
    let samples: Vec<SceneSample<'_, f64>> = idx
        .iter()
        .map(|&i| SceneSample {
            feature_map: &ds.scenes[i].feature_map,
            rig: &ds.scenes[i].rig,
            gts: &ds.scenes[i].gt,
            prev: if fusion.is_some() { ds.prev_frame(i) } else { None },
        })
        .collect();
    let ys = cfg.anchor.y_sampling().map_err(CliError::data)?;
    let anchors = build_anchor_grid(&cfg.anchor, &ys).map_err(|e| CliError::Config(e.to_string()))?;
    let n_classes = ds.scenes.iter().flat_map(|s| s.gt.iter().map(|l| l.category + 1)).max().unwrap_or(0).max(2);

    let outcome = train_model(&samples, &anchors, n_classes, &cfg.train.config, cfg.train.passes, fusion).map_err(|e| match e {
        lanekit::head::HeadError::InvalidConfig(m) => CliError::Config(m),
        other => CliError::data(other),
    })?;
    let curve = &outcome.loss_curve;
    let (first, last) = (curve.first().map(|e| e.mean_loss), curve.last().map(|e| e.mean_loss));
    if !last.is_some_and(f64::is_finite) {
        return Err(CliError::Data("training diverged".into()));
    }

    let ckpt = Checkpoint {
        config: cfg.train.config.clone(),
        models: outcome.models,
        metadata: json!({ "anchor": cfg.anchor, "n_classes": n_classes, "channels": ds.manifest.channels }),
    };
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &ckpt).map_err(CliError::data)?;
    write_atomic(&ckpt_path, &bytes)?;

    let mut csv = String::from("pass,epoch,mean_loss,learning_rate\n");
    for e in curve {
        csv.push_str(&format!("{},{},{},{}\n", e.pass, e.epoch, e.mean_loss, e.learning_rate));
    }
    write_atomic(&out.join("loss_curve.csv"), csv.as_bytes())?;
    let summary = json!({
        "command": "train",
        "checkpoint": ckpt_path,
        "scenes": samples.len(),
        "anchors": anchors.len(),
        "passes": cfg.train.passes,
        "fusion": fusion,
        "initial_loss": first,
        "final_loss": last,
    });
    write_json(&out.join("train_summary.json"), &summary)?;
    echo_config(&out, cfg)?;
    Ok(summary)
}
