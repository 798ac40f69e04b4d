use std::fs::File;
use std::io::BufReader;

use lanekit::anchor::{build_anchor_grid, AnchorGridConfig};
use lanekit::head::{postprocess, predict_iterative, read_checkpoint, Checkpoint};
use lanekit::lane::{LaneRecord, Proposal};
use rayon::prelude::*;
use serde_json::{json, Value};

use super::train::Indexed;
use crate::args::PredictArgs;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::util::{echo_config, require, write_predictions, PredictionSet, PREDICTION_SCHEMA};

/// Options that only exist on the command line.
pub struct PredictOpts {
    pub split: String,
    pub from_gt: bool,
    pub fusion: Option<lanekit::head::FusionStrategy>,
}

pub fn apply(args: &PredictArgs, cfg: &mut RunConfig) -> PredictOpts {
    let p = &mut cfg.predict;
    if args.iters.is_some() {
        p.iters = args.iters;
    }
    p.temporal |= args.temporal || args.fusion.is_some();
    if let Some(v) = args.nms_threshold {
        p.nms_threshold = v;
    }
    if let Some(v) = args.min_score {
        p.min_score = v;
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
    PredictOpts { split: args.split.clone(), from_gt: args.from_gt, fusion: args.fusion }
}

fn load_checkpoint(path: &std::path::Path) -> Result<Checkpoint<f64>, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_checkpoint(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn run(cfg: &RunConfig, opts: &PredictOpts) -> Result<Value, CliError> {
    let data = require(cfg.paths.data.clone(), "dataset directory (--data)")?;
    let out = require(cfg.paths.out.clone(), "output directory (--out)")?;
    if !matches!(opts.split.as_str(), "train" | "val" | "all") {
        return Err(CliError::Config(format!("unknown split {:?}", opts.split)));
    }
    let ds = Indexed::load(&data)?;
    let idx = ds.split(&opts.split);
    let ys = lanekit::anchor::YSampling::new(ds.manifest.y_samples.clone()).map_err(CliError::data)?;

    let lanes: Vec<Vec<LaneRecord>> = if opts.from_gt {
        let n_classes = ds.scenes.iter().flat_map(|s| s.gt.iter().map(|l| l.category + 1)).max().unwrap_or(0).max(2);
        idx.iter()
            .map(|&i| {
                ds.scenes[i]
                    .gt
                    .iter()
                    .map(|g| {
                        let mut probs = vec![0.0; n_classes];
                        probs[g.category] = 1.0;
                        LaneRecord::from_proposal(&Proposal::new(g.clone(), probs), &ys)
                    })
                    .collect()
            })
            .collect()
    } else {
        let ckpt_path = require(cfg.paths.checkpoint.clone(), "checkpoint (--checkpoint)")?;
        let ckpt = load_checkpoint(&ckpt_path)?;
        let fused = ckpt.models[0].fusion.as_ref().map(|f| f.strategy);
        let p = &cfg.predict;
        match (fused, p.temporal) {
            (Some(_), false) => return Err(CliError::Config("checkpoint was trained with temporal fusion; pass --temporal".into())),
            (None, true) => return Err(CliError::Config("--temporal needs a checkpoint trained with --fusion".into())),
            _ => {}
        }
        if let (Some(want), Some(have)) = (opts.fusion, fused) {
            if want != have {
                return Err(CliError::Config(format!("checkpoint uses {have}, not {want}")));
            }
        }
        if p.temporal && idx.iter().any(|&i| ds.prev[i].is_none()) {
            return Err(CliError::Config("--temporal needs a dataset written with --temporal".into()));
        }
        let iters = p.iters.unwrap_or(ckpt.models.len());
        if iters > ckpt.models.len() {
            return Err(CliError::Config(format!("checkpoint has {} heads, asked for {iters} passes", ckpt.models.len())));
        }
        let grid: AnchorGridConfig<f64> = match ckpt.metadata.get("anchor") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Data(format!("checkpoint anchor grid: {e}")))?,
            None => cfg.anchor.clone(),
        };
        if grid.y_samples != ds.manifest.y_samples {
            return Err(CliError::Data("checkpoint and dataset use different y samples".into()));
        }
        let anchors = build_anchor_grid(&grid, &ys).map_err(CliError::data)?;
        idx.par_iter()
            .map(|&i| {
                let s = &ds.scenes[i];
                let prev = if p.temporal { ds.prev_frame(i) } else { None };
                let raw = predict_iterative(&s.feature_map, &anchors, &ckpt.models, &s.rig, iters, prev.as_ref())
                    .map_err(CliError::data)?;
                Ok(postprocess(&raw, p.nms_threshold, p.min_score).iter().map(|q| LaneRecord::from_proposal(q, &ys)).collect())
            })
            .collect::<Result<_, CliError>>()?
    };
    let set = PredictionSet {
        schema_version: PREDICTION_SCHEMA,
        source: if opts.from_gt { "ground_truth" } else { "model" }.into(),
        y_samples: ds.manifest.y_samples.clone(),
        scenes: idx.iter().map(|&i| ds.manifest.scenes[i].name.clone()).collect(),
    };
    write_predictions(&out, &set, &lanes)?;
    echo_config(&out, cfg)?;
    let n: usize = lanes.iter().map(Vec::len).sum();
    Ok(json!({ "command": "predict", "out": out, "scenes": set.scenes.len(), "lanes": n, "source": set.source }))
}
