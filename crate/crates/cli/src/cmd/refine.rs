use lanekit::anchor::YSampling;
use lanekit::ewc::optimize_proposals;
use lanekit::lane::{LaneRecord, Proposal};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::RefineArgs;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::util::{echo_config, read_predictions, require, write_predictions, PredictionSet};

pub fn apply(args: &RefineArgs, cfg: &mut RunConfig) {
    if let Some(v) = args.alpha {
        cfg.ewc.alpha = v;
    }
    if let Some(v) = args.steps {
        cfg.ewc.steps = v;
    }
    if args.pred.is_some() {
        cfg.paths.predictions = args.pred.clone();
    }
    if args.out.out.is_some() {
        cfg.paths.out = args.out.out.clone();
    }
}

pub fn run(cfg: &RunConfig) -> Result<Value, CliError> {
    let pred = require(cfg.paths.predictions.clone(), "prediction directory (--pred)")?;
    let out = require(cfg.paths.out.clone(), "output directory (--out)")?;
    if out == pred {
        return Err(CliError::Config("--out must differ from --pred".into()));
    }
    let (set, lanes) = read_predictions(&pred)?;
    let ys = YSampling::new(set.y_samples.clone()).map_err(CliError::data)?;
    let refined: Vec<Vec<LaneRecord>> = lanes
        .par_iter()
        .zip(&set.scenes)
        .map(|(recs, name)| {
            let props: Vec<Proposal<f64>> = recs
                .iter()
                .map(|r| r.to_proposal(&ys))
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Data(format!("{name}: {e}")))?;
            let done = optimize_proposals(&props, &ys, &cfg.ewc).map_err(|e| CliError::Data(format!("{name}: {e}")))?;
            Ok(done.iter().map(|p| LaneRecord::from_proposal(p, &ys)).collect())
        })
        .collect::<Result<_, CliError>>()?;
    let out_set = PredictionSet { source: format!("{}+refined", set.source), ..set };
    write_predictions(&out, &out_set, &refined)?;
    echo_config(&out, cfg)?;
    Ok(json!({ "command": "refine", "out": out, "scenes": out_set.scenes.len() }))
}
