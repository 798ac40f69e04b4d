use crate::anchor::{proposal_to_anchor, Anchor, YSampling};
use crate::geometry::{CameraRig, RigidTransform};
use crate::lane::{nms, Lane3D, Proposal};
use crate::sampling::{sample_anchor_features, sample_cross_frame, AnchorFeature, FeatureMap};
use crate::scalar::Real;

use super::optim::Model;
use super::{forward_raw, ForwardCache, HeadError};

/// Previous frame of a sequence: its feature map, camera and the pose taking
/// current ground coordinates into the previous ground frame.
#[derive(Debug, Clone, Copy)]
pub struct PrevFrame<'a, T: Real> {
    pub feature_map: &'a FeatureMap<T>,
    pub rig: &'a CameraRig<T>,
    pub pose: &'a RigidTransform<T>,
}

pub(crate) type SampledFeatures<T> = (Vec<AnchorFeature<T>>, Option<Vec<AnchorFeature<T>>>);

pub(crate) fn sample_all<T: Real>(
    anchors: &[Anchor<T>],
    fm: &FeatureMap<T>,
    rig: &CameraRig<T>,
    prev: Option<&PrevFrame<'_, T>>,
) -> SampledFeatures<T> {
    let cur = anchors.iter().map(|a| sample_anchor_features(a, fm, rig)).collect();
    let prev = prev.map(|p| anchors.iter().map(|a| sample_cross_frame(a, p.feature_map, p.rig, p.pose)).collect());
    (cur, prev)
}

/// Runs the model on pre-sampled features and decodes one proposal per anchor
/// (continuous visibility).
pub fn predict_proposals<T: Real>(
    features: &[AnchorFeature<T>],
    prev_features: Option<&[AnchorFeature<T>]>,
    anchors: &[Anchor<T>],
    model: &Model<T>,
) -> Result<Vec<Proposal<T>>, HeadError> {
    if features.len() != anchors.len() {
        return Err(HeadError::ShapeMismatch(format!("{} features for {} anchors", features.len(), anchors.len())));
    }
    let s = model.head.shape();
    let n = s.n_points;
    let mut cache = ForwardCache::new(&s);
    let mut fused = AnchorFeature::zeros(n, s.channels);
    let mut out = Vec::with_capacity(anchors.len());
    for (j, (feat, anchor)) in features.iter().zip(anchors).enumerate() {
        if feat.n != n || feat.c != s.channels || anchor.points.len() != n {
            return Err(HeadError::ShapeMismatch(format!("anchor {j} does not fit the head")));
        }
        let x: &[T] = match (&model.fusion, prev_features) {
            (Some(fp), Some(prev)) => {
                if prev.len() != features.len() {
                    return Err(HeadError::ShapeMismatch("previous features count".into()));
                }
                fp.forward_into(feat, &prev[j], &mut fused);
                &fused.per_point
            }
            (Some(_), None) => {
                return Err(HeadError::ShapeMismatch("fusion model needs previous-frame features".into()));
            }
            _ => &feat.per_point,
        };
        forward_raw(x, &model.head, &mut cache);
        let xs = (0..n).map(|k| anchor.points[k].x + cache.offsets[k]).collect();
        let zs = (0..n).map(|k| anchor.points[k].z + cache.offsets[n + k]).collect();
        let lane = Lane3D::new(xs, zs, cache.vis.clone(), 0)?;
        out.push(Proposal::new(lane, cache.probs.clone()));
    }
    Ok(out)
}

pub(crate) fn anchor_ys<T: Real>(anchors: &[Anchor<T>]) -> Result<YSampling<T>, HeadError> {
    let first = anchors.first().ok_or_else(|| HeadError::ShapeMismatch("no anchors".into()))?;
    Ok(YSampling::new(first.points.iter().map(|p| p.y).collect())?)
}

/// Proposals after `iters` regression passes. Pass `i` uses `models[i]`; later
/// passes start from the previous pass's proposals. Classification comes from
/// the last pass.
pub fn predict_iterative<T: Real>(
    fm: &FeatureMap<T>,
    anchors: &[Anchor<T>],
    models: &[Model<T>],
    rig: &CameraRig<T>,
    iters: usize,
    prev: Option<&PrevFrame<'_, T>>,
) -> Result<Vec<Proposal<T>>, HeadError> {
    if iters == 0 || models.len() < iters {
        return Err(HeadError::InvalidConfig(format!("{iters} iterations need as many heads, got {}", models.len())));
    }
    let ys = anchor_ys(anchors)?;
    let mut current: Vec<Anchor<T>> = anchors.to_vec();
    let mut proposals = Vec::new();
    for model in &models[..iters] {
        let (feats, prev_feats) = sample_all(&current, fm, rig, if model.fusion.is_some() { prev } else { None });
        proposals = predict_proposals(&feats, prev_feats.as_deref(), &current, model)?;
        current = proposals.iter().map(|p| proposal_to_anchor(p, &ys)).collect::<Result<_, _>>()?;
    }
    Ok(proposals)
}

/// Binarizes visibility, drops low-score or invisible proposals and applies NMS.
pub fn postprocess<T: Real>(proposals: &[Proposal<T>], nms_threshold: T, min_score: T) -> Vec<Proposal<T>> {
    let kept: Vec<_> = proposals
        .iter()
        .filter(|p| p.score >= min_score)
        .map(|p| Proposal { lane: p.lane.binarized(), ..p.clone() })
        .filter(|p| p.lane.visible_count() > 0)
        .collect();
    nms(&kept, nms_threshold)
}
