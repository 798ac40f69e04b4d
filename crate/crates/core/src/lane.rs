//! Lane and proposal containers, the anchor-to-lane distance, positive
//! assignment and distance-based NMS.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{Anchor, YSampling};
use crate::scalar::Real;

/// Visibility level at which a predicted point counts as present.
pub const VIS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LaneError {
    #[error("lane has no visible points")]
    NoVisiblePoints,
    #[error("point count mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("visibility must lie in [0, 1]")]
    InvalidVisibility,
    #[error("lane y-coordinates do not match the sampling")]
    SamplingMismatch,
    #[error("n must be at least one and the anchor set non-empty")]
    InvalidAssignment,
}

/// `N` points `(x^k, y^k, z^k, vis^k)` sharing an externally held [`YSampling`].
#[derive(Debug, Clone, PartialEq)]
pub struct Lane3D<T> {
    pub xs: Vec<T>,
    pub zs: Vec<T>,
    pub vis: Vec<T>,
    pub category: usize,
}

impl<T: Real> Lane3D<T> {
    pub fn new(xs: Vec<T>, zs: Vec<T>, vis: Vec<T>, category: usize) -> Result<Self, LaneError> {
        if zs.len() != xs.len() || vis.len() != xs.len() {
            return Err(LaneError::LengthMismatch { expected: xs.len(), got: zs.len().min(vis.len()) });
        }
        if vis.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(LaneError::InvalidVisibility);
        }
        Ok(Self { xs, zs, vis, category })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn visible(&self, k: usize) -> bool {
        self.vis[k] >= T::lit(VIS_THRESHOLD)
    }

    pub fn visible_count(&self) -> usize {
        (0..self.len()).filter(|&k| self.visible(k)).count()
    }

    /// Copy with visibility snapped to {0, 1} at [`VIS_THRESHOLD`].
    pub fn binarized(&self) -> Self {
        let vis = (0..self.len()).map(|k| if self.visible(k) { T::one() } else { T::zero() }).collect();
        Self { vis, ..self.clone() }
    }
}

/// Prediction for one anchor: the regressed lane plus class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal<T> {
    pub lane: Lane3D<T>,
    pub class_probs: Vec<T>,
    pub score: T,
}

impl<T: Real> Proposal<T> {
    /// Score and category come from the best non-background class (class 0 is background).
    pub fn new(mut lane: Lane3D<T>, class_probs: Vec<T>) -> Self {
        let (best, score) = class_probs
            .iter()
            .enumerate()
            .skip(1)
            .fold(None, |acc: Option<(usize, T)>, (i, &p)| match acc {
                Some((_, s)) if s >= p => acc,
                _ => Some((i, p)),
            })
            .unwrap_or((0, T::zero()));
        if best > 0 {
            lane.category = best;
        }
        Self { lane, class_probs, score }
    }
}

/// Positive `(gt_index, anchor_index)` pairs and the remaining negative anchors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub negatives: Vec<usize>,
}

impl Assignment {
    /// Class target per anchor: the category of its nearest assigned lane, or 0.
    pub fn class_targets<T: Real>(&self, gts: &[Lane3D<T>], n_anchors: usize, dists: &[Vec<T>]) -> Vec<usize> {
        let mut best: Vec<Option<(T, usize)>> = vec![None; n_anchors];
        for &(g, a) in &self.pairs {
            let d = dists[g][a];
            if best[a].is_none_or(|(bd, _)| d < bd) {
                best[a] = Some((d, gts[g].category));
            }
        }
        best.into_iter().map(|b| b.map_or(0, |(_, c)| c)).collect()
    }
}

fn check_len<T>(n: usize, v: &[T]) -> Result<(), LaneError> {
    if v.len() != n {
        Err(LaneError::LengthMismatch { expected: n, got: v.len() })
    } else {
        Ok(())
    }
}

/// Visibility-weighted mean lateral/vertical distance between a lane and an anchor.
pub fn anchor_gt_distance<T: Real>(gt: &Lane3D<T>, a: &Anchor<T>) -> Result<T, LaneError> {
    check_len(gt.len(), &a.points)?;
    let mut num = T::zero();
    let mut den = T::zero();
    for (k, q) in a.points.iter().enumerate() {
        let (dx, dz) = (gt.xs[k] - q.x, gt.zs[k] - q.z);
        num += gt.vis[k] * (dx * dx + dz * dz).sqrt();
        den += gt.vis[k];
    }
    if den <= T::zero() {
        return Err(LaneError::NoVisiblePoints);
    }
    Ok(num / den)
}

/// Distance matrix `[gt][anchor]`.
pub fn distance_matrix<T: Real>(gts: &[Lane3D<T>], anchors: &[Anchor<T>]) -> Result<Vec<Vec<T>>, LaneError> {
    gts.iter().map(|g| anchors.iter().map(|a| anchor_gt_distance(g, a)).collect()).collect()
}

/// Assigns the `n` nearest anchors to every lane; ties go to the lower index.
pub fn assign_positives<T: Real>(
    gts: &[Lane3D<T>],
    anchors: &[Anchor<T>],
    n: usize,
) -> Result<Assignment, LaneError> {
    let dists = distance_matrix(gts, anchors)?;
    assign_from_distances(&dists, anchors.len(), n)
}

pub fn assign_from_distances<T: Real>(
    dists: &[Vec<T>],
    n_anchors: usize,
    n: usize,
) -> Result<Assignment, LaneError> {
    if n == 0 || n_anchors == 0 {
        return Err(LaneError::InvalidAssignment);
    }
    let mut positive = vec![false; n_anchors];
    let mut pairs = Vec::new();
    for (g, row) in dists.iter().enumerate() {
        let mut order: Vec<usize> = (0..n_anchors).collect();
        order.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        for &a in order.iter().take(n) {
            pairs.push((g, a));
            positive[a] = true;
        }
    }
    let negatives = (0..n_anchors).filter(|&a| !positive[a]).collect();
    Ok(Assignment { pairs, negatives })
}

/// [`assign_from_distances`] plus every other anchor closer than `radius` to
/// its nearest lane, paired with that lane.
pub fn assign_within_radius<T: Real>(
    dists: &[Vec<T>],
    n_anchors: usize,
    n: usize,
    radius: T,
) -> Result<Assignment, LaneError> {
    let mut a = assign_from_distances(dists, n_anchors, n)?;
    let mut positive = vec![false; n_anchors];
    for &(_, j) in &a.pairs {
        positive[j] = true;
    }
    for (j, pos) in positive.iter_mut().enumerate() {
        let nearest = (0..dists.len()).min_by(|&g, &h| dists[g][j].partial_cmp(&dists[h][j]).unwrap_or(std::cmp::Ordering::Equal));
        if let Some(g) = nearest.filter(|&g| !*pos && dists[g][j] < radius) {
            a.pairs.push((g, j));
            *pos = true;
        }
    }
    a.negatives = (0..n_anchors).filter(|&j| !positive[j]).collect();
    Ok(a)
}

/// Mean point distance over points visible in both proposals; `+∞` without overlap.
pub fn visible_part_distance<T: Real>(a: &Lane3D<T>, b: &Lane3D<T>) -> T {
    let mut sum = T::zero();
    let mut n = 0usize;
    for k in 0..a.len().min(b.len()) {
        if a.visible(k) && b.visible(k) {
            let (dx, dz) = (a.xs[k] - b.xs[k], a.zs[k] - b.zs[k]);
            sum += (dx * dx + dz * dz).sqrt();
            n += 1;
        }
    }
    if n == 0 {
        T::infinity()
    } else {
        sum / T::lit(n as f64)
    }
}

/// Greedy suppression by descending score (stable on ties).
pub fn nms<T: Real>(proposals: &[Proposal<T>], threshold: T) -> Vec<Proposal<T>> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        proposals[b].score.partial_cmp(&proposals[a].score).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let cand = &proposals[i].lane;
        if kept.iter().all(|&j| visible_part_distance(cand, &proposals[j].lane) >= threshold) {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| proposals[i].clone()).collect()
}

/// Exchange format for one lane: `{"category", "points": [[x, y, z, vis], …]}`
/// plus optional prediction fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneRecord {
    pub category: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<Vec<f64>>,
    pub points: Vec<[f64; 4]>,
}

impl LaneRecord {
    pub fn from_lane<T: Real>(lane: &Lane3D<T>, ys: &YSampling<T>) -> Self {
        let points = (0..lane.len())
            .map(|k| {
                [lane.xs[k].to_f64_lossy(), ys.values()[k].to_f64_lossy(), lane.zs[k].to_f64_lossy(), lane.vis[k].to_f64_lossy()]
            })
            .collect();
        Self { category: lane.category, score: None, class_probs: None, points }
    }

    pub fn from_proposal<T: Real>(p: &Proposal<T>, ys: &YSampling<T>) -> Self {
        let mut r = Self::from_lane(&p.lane, ys);
        r.score = Some(p.score.to_f64_lossy());
        r.class_probs = Some(p.class_probs.iter().map(|v| v.to_f64_lossy()).collect());
        r
    }

    /// Converts back, checking each point's `y` against the sampling.
    pub fn to_lane<T: Real>(&self, ys: &YSampling<T>) -> Result<Lane3D<T>, LaneError> {
        check_len(ys.len(), &self.points)?;
        for (p, y) in self.points.iter().zip(ys.values()) {
            if (p[1] - y.to_f64_lossy()).abs() > 1e-6 {
                return Err(LaneError::SamplingMismatch);
            }
        }
        Lane3D::new(
            self.points.iter().map(|p| T::lit(p[0])).collect(),
            self.points.iter().map(|p| T::lit(p[2])).collect(),
            self.points.iter().map(|p| T::lit(p[3])).collect(),
            self.category,
        )
    }

    pub fn to_proposal<T: Real>(&self, ys: &YSampling<T>) -> Result<Proposal<T>, LaneError> {
        let lane = self.to_lane(ys)?;
        let score = T::lit(self.score.unwrap_or(1.0));
        let class_probs = self.class_probs.as_ref().map(|c| c.iter().map(|&v| T::lit(v)).collect()).unwrap_or_default();
        Ok(Proposal { lane, class_probs, score })
    }
}
