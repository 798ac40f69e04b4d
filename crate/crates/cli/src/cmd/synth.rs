use lanekit::synth::{
    generate_scene, generate_sequence, random_specs, write_manifest, write_scene, Manifest, ManifestEntry, SceneProfile,
    DATASET_SCHEMA,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::SynthArgs;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::util::{echo_config, require};

pub fn apply(args: &SynthArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let s = &mut cfg.synth;
    if let Some(n) = args.scenes {
        s.scenes = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &args.profile {
        s.profile = p.parse::<SceneProfile>().map_err(|e| CliError::Config(e.to_string()))?;
    }
    s.occlusion |= args.occlusion;
    s.temporal |= args.temporal;
    if let Some(v) = args.val_fraction {
        s.val_fraction = v;
    }
    if let Some(n) = args.noise {
        s.channels.noise_std = n;
    }
    if args.out.out.is_some() {
        cfg.paths.out = args.out.out.clone();
    }
    Ok(())
}

fn scene_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

pub fn run(cfg: &RunConfig) -> Result<Value, CliError> {
    let out = require(cfg.paths.out.clone(), "output directory (--out)")?;
    let s = &cfg.synth;
    if s.scenes == 0 {
        return Err(CliError::Config("synth needs at least one scene".into()));
    }
    let mut specs = random_specs(s.profile, s.occlusion, s.scenes, cfg.seed);
    for spec in &mut specs {
        spec.channels = lanekit::synth::ChannelSpec { occlude_features: s.occlusion, ..s.channels.clone() };
    }
    let mut speed_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let speeds: Vec<f64> = (0..s.scenes)
        .map(|_| if s.speed_range.0 < s.speed_range.1 { speed_rng.gen_range(s.speed_range.0..s.speed_range.1) } else { s.speed_range.0 })
        .collect();
    let n_val = (s.scenes as f64 * s.val_fraction).round() as usize;
    let entries: Vec<Vec<ManifestEntry>> = (0..s.scenes)
        .into_par_iter()
        .map(|i| {
            let split = Some(if i < s.scenes - n_val { "train" } else { "val" }.to_string());
            let profile = Some(format!("{:?}", s.profile));
            let seed = scene_seed(cfg.seed, i);
            let spec = &specs[i];
            if s.temporal {
                let seq = generate_sequence::<f64>(spec, 2, speeds[i], seed).map_err(CliError::data)?;
                let (prev, cur) = (format!("scene_{:04}", 2 * i), format!("scene_{:04}", 2 * i + 1));
                write_scene(&out.join(&prev), &seq[0])?;
                write_scene(&out.join(&cur), &seq[1])?;
                Ok(vec![
                    ManifestEntry { name: prev.clone(), prev: None, split: None, profile: profile.clone() },
                    ManifestEntry { name: cur, prev: Some(prev), split, profile },
                ])
            } else {
                let scene = generate_scene::<f64>(spec, seed).map_err(CliError::data)?;
                let name = format!("scene_{i:04}");
                write_scene(&out.join(&name), &scene)?;
                Ok(vec![ManifestEntry { name, prev: None, split, profile }])
            }
        })
        .collect::<Result<_, CliError>>()?;
    let manifest = Manifest {
        schema_version: DATASET_SCHEMA,
        y_samples: specs[0].y_samples.clone(),
        channels: specs[0].channels.count(),
        scenes: entries.into_iter().flatten().collect(),
        metadata: json!({
            "seed": cfg.seed,
            "profile": s.profile,
            "occlusion": s.occlusion,
            "temporal": s.temporal,
            "samples": s.scenes,
            "val_samples": n_val,
        }),
    };
    write_manifest(&out, &manifest)?;
    echo_config(&out, cfg)?;
    Ok(json!({ "command": "synth", "out": out, "samples": s.scenes, "files": manifest.scenes.len() }))
}
