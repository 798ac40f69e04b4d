use std::collections::HashMap;

use lanekit::anchor::YSampling;
use lanekit::eval::{compute_metrics, once_metrics, EvalError, SceneEval};
use lanekit::lane::Proposal;
use lanekit::synth::{read_manifest, read_scene};
use serde_json::{json, Value};

use crate::args::EvalArgs;
use crate::config::{Protocol, RunConfig};
use crate::error::CliError;
use crate::util::{echo_config, read_predictions, require, write_atomic, write_json};

pub const METRICS_SCHEMA: u32 = 1;

pub fn apply(args: &EvalArgs, cfg: &mut RunConfig) {
    if let Some(p) = args.protocol {
        cfg.eval.protocol = p;
    }
    if args.data.is_some() {
        cfg.paths.data = args.data.clone();
    }
    if args.pred.is_some() {
        cfg.paths.predictions = args.pred.clone();
    }
    if args.out.out.is_some() {
        cfg.paths.out = args.out.out.clone();
    }
}

fn flat_rows(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    if let Value::Object(m) = v {
        for (k, x) in m {
            if x.is_number() {
                rows.push((format!("{prefix}.{k}"), x.to_string()));
            }
        }
    }
}

pub fn run(cfg: &RunConfig) -> Result<Value, CliError> {
    let data = require(cfg.paths.data.clone(), "dataset directory (--data)")?;
    let pred = require(cfg.paths.predictions.clone(), "prediction directory (--pred)")?;
    let out = require(cfg.paths.out.clone(), "output directory (--out)")?;
    let manifest = read_manifest(&data)?;
    let (set, lanes) = read_predictions(&pred)?;
    if set.y_samples != manifest.y_samples {
        return Err(CliError::Data("predictions and dataset use different y samples".into()));
    }
    let ys = YSampling::new(manifest.y_samples.clone()).map_err(CliError::data)?;
    let known: HashMap<&str, ()> = manifest.scenes.iter().map(|e| (e.name.as_str(), ())).collect();
    let mut gts = Vec::with_capacity(set.scenes.len());
    let mut preds = Vec::with_capacity(set.scenes.len());
    for (name, recs) in set.scenes.iter().zip(&lanes) {
        if !known.contains_key(name.as_str()) {
            return Err(CliError::Data(format!("scene {name} is not in the dataset")));
        }
        gts.push(read_scene(&data.join(name), &ys)?.gt);
        let p: Vec<Proposal<f64>> =
            recs.iter().map(|r| r.to_proposal(&ys)).collect::<Result<_, _>>().map_err(|e| CliError::Data(format!("{name}: {e}")))?;
        preds.push(p);
    }
    let scenes: Vec<SceneEval<'_, f64>> = preds.iter().zip(&gts).map(|(p, g)| SceneEval { preds: p, gts: g, ys: &ys }).collect();

    let proto = cfg.eval.protocol;
    let standard = match proto {
        Protocol::Standard | Protocol::Both => Some(compute_metrics(&scenes, &cfg.eval.standard).map_err(|e| match e {
            EvalError::EmptyGroundTruth => CliError::Data("no ground-truth lanes in the evaluated scenes".into()),
            other => CliError::data(other),
        })?),
        Protocol::Once => None,
    };
    let once = matches!(proto, Protocol::Once | Protocol::Both).then(|| once_metrics(&scenes, &cfg.eval.once));
    let report = json!({
        "schema_version": METRICS_SCHEMA,
        "protocol": proto,
        "scenes": scenes.len(),
        "standard": standard,
        "once": once,
    });
    let mut rows = Vec::new();
    flat_rows("standard", &report["standard"], &mut rows);
    flat_rows("once", &report["once"], &mut rows);
    let mut csv = String::from("schema_version,metric,value\n");
    for (k, v) in rows {
        csv.push_str(&format!("{METRICS_SCHEMA},{k},{v}\n"));
    }
    write_json(&out.join("metrics.json"), &report)?;
    write_atomic(&out.join("metrics.csv"), csv.as_bytes())?;
    echo_config(&out, cfg)?;
    Ok(report)
}
