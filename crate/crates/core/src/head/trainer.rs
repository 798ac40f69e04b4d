use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{proposal_to_anchor, Anchor};
use crate::geometry::CameraRig;
use crate::lane::Lane3D;
use crate::sampling::FeatureMap;
use crate::scalar::Real;

use super::fusion::{FusionParams, FusionStrategy};
use super::infer::{anchor_ys, predict_proposals, sample_all, PrevFrame};
use super::loss::LossTargets;
use super::optim::{step_with_lr, AdamMoments, Batch, Model};
use super::{HeadError, HeadParams, HeadShape, TrainConfig};

/// One training scene.
#[derive(Debug, Clone, Copy)]
pub struct SceneSample<'a, T: Real> {
    pub feature_map: &'a FeatureMap<T>,
    pub rig: &'a CameraRig<T>,
    pub gts: &'a [Lane3D<T>],
    pub prev: Option<PrevFrame<'a, T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Refinement pass being trained (0-based).
    pub pass: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub models: Vec<Model<T>>,
    pub loss_curve: Vec<EpochStats>,
}

/// Trains `passes` heads in sequence. Pass 0 regresses from `anchors`; pass
/// `i > 0` is warm-started from pass `i − 1` and trained on the proposals of the
/// frozen earlier passes, with targets reassigned to those refined anchors
/// (see [`LossTargets::assign_refined`]).
pub fn train_model<T: Real>(
    scenes: &[SceneSample<'_, T>],
    anchors: &[Anchor<T>],
    n_classes: usize,
    cfg: &TrainConfig,
    passes: usize,
    fusion: Option<FusionStrategy>,
) -> Result<TrainOutcome<T>, HeadError> {
    cfg.validate()?;
    if passes == 0 || anchors.is_empty() || scenes.is_empty() {
        return Err(HeadError::InvalidConfig("training needs scenes, anchors and at least one pass".into()));
    }
    if fusion.is_some() && scenes.iter().any(|s| s.prev.is_none()) {
        return Err(HeadError::InvalidConfig("temporal training needs a previous frame for every scene".into()));
    }
    let channels = scenes[0].feature_map.channels();
    let shape = HeadShape { n_points: anchors[0].points.len(), channels, n_classes, hidden: cfg.hidden };
    let ys = anchor_ys(anchors)?;

    let mut targets: Vec<LossTargets> = scenes
        .iter()
        .map(|s| LossTargets::assign(s.gts, anchors, cfg.n_positives))
        .collect::<Result<_, _>>()?;

    let mut models: Vec<Model<T>> = Vec::with_capacity(passes);
    let mut curve = Vec::new();
    let mut scene_anchors: Vec<Vec<Anchor<T>>> = vec![anchors.to_vec(); scenes.len()];
    for pass in 0..passes {
        let mut model = match models.last() {
            None => {
                let head = HeadParams::init(shape, cfg.seed)?;
                match fusion {
                    None => Model::new(head),
                    Some(st) => Model::with_fusion(head, FusionParams::init(st, shape.n_points, channels, cfg.seed)),
                }
            }
            Some(prev) => {
                let mut m = prev.clone();
                m.head.moments = AdamMoments::new(shape.param_count());
                if let Some(f) = m.fusion.as_mut() {
                    f.moments = AdamMoments::new(f.values().len());
                }
                m
            }
        };
        if pass > 0 {
            let frozen = &models[pass - 1];
            for ((s, sa), t) in scenes.iter().zip(scene_anchors.iter_mut()).zip(targets.iter_mut()) {
                let (feats, prev) = sample_all(sa, s.feature_map, s.rig, s.prev.as_ref().filter(|_| frozen.fusion.is_some()));
                let props = predict_proposals(&feats, prev.as_deref(), sa, frozen)?;
                *sa = props.iter().map(|p| proposal_to_anchor(p, &ys)).collect::<Result<_, _>>()?;
                *t = LossTargets::assign_refined(s.gts, sa, cfg.n_positives, T::lit(cfg.refine_radius))?;
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1000 * pass as u64 + 1));
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        for epoch in 0..cfg.epochs {
            let lr = match cfg.lr_decay_epoch {
                Some(e) if epoch >= e => cfg.learning_rate * 0.1,
                _ => cfg.learning_rate,
            };
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for &i in &order {
                let s = &scenes[i];
                let (feats, prev) = sample_all(&scene_anchors[i], s.feature_map, s.rig, s.prev.as_ref().filter(|_| fusion.is_some()));
                let batch = Batch {
                    features: &feats,
                    prev_features: prev.as_deref(),
                    anchors: &scene_anchors[i],
                    gts: s.gts,
                    targets: &targets[i],
                };
                total += step_with_lr(&mut model, &batch, cfg, T::lit(lr))?.to_f64_lossy();
            }
            curve.push(EpochStats { pass, epoch, mean_loss: total / scenes.len() as f64, learning_rate: lr });
        }
        models.push(model);
    }
    Ok(TrainOutcome { models, loss_curve: curve })
}
