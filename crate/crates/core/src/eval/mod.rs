//! Lane detection metrics: matched F1/AP with close/far x-z errors, and the
//! top-view IoU + unilateral Chamfer protocol.

mod hungarian;
mod once;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::YSampling;
use crate::lane::{Lane3D, Proposal};
use crate::scalar::Real;

pub use hungarian::{match_with_dummies, solve as solve_assignment};
pub use once::{chamfer_unilateral, once_metrics, rasterize_top_view, top_view_iou, OnceConfig, OnceReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no ground-truth lanes to evaluate against")]
    EmptyGroundTruth,
    #[error("lane with {got} points does not match {expected} y-samples")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// A match is a true positive when more than this fraction of evaluated points are close.
    pub tp_point_frac: f64,
    /// Point distance threshold in meters.
    pub tp_dist: f64,
    pub close: (f64, f64),
    pub far: (f64, f64),
    /// Sum squared point distances before the square root instead of plain distances.
    pub squared_cost: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { tp_point_frac: 0.75, tp_dist: 1.5, close: (0.0, 40.0), far: (40.0, 100.0), squared_cost: false }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(0.0..=1.0).contains(&self.tp_point_frac) {
            return Err(EvalError::InvalidConfig("tp_point_frac must lie in [0, 1]"));
        }
        if !(self.tp_dist > 0.0) {
            return Err(EvalError::InvalidConfig("tp_dist must be positive"));
        }
        if !(self.close.0 < self.close.1 && self.far.0 < self.far.1) {
            return Err(EvalError::InvalidConfig("ranges must be increasing"));
        }
        Ok(())
    }
}

/// Distance at each y-sample where the ground truth is visible; `None` where it is not.
/// A point the prediction does not cover counts as `tp_dist` (never close).
pub fn point_distances<T: Real>(pred: &Lane3D<T>, gt: &Lane3D<T>, tp_dist: f64) -> Vec<Option<f64>> {
    (0..gt.len())
        .map(|k| {
            if !gt.visible(k) {
                None
            } else if !pred.visible(k) {
                Some(tp_dist)
            } else {
                let dx = (pred.xs[k] - gt.xs[k]).to_f64_lossy();
                let dz = (pred.zs[k] - gt.zs[k]).to_f64_lossy();
                Some((dx * dx + dz * dz).sqrt())
            }
        })
        .collect()
}

fn cost_from(d: &[Option<f64>], squared: bool) -> f64 {
    d.iter().flatten().map(|&v| if squared { v * v } else { v }).sum::<f64>().sqrt()
}

/// Square root of the summed point distances over ground-truth-visible points.
pub fn pairwise_cost<T: Real>(pred: &Lane3D<T>, gt: &Lane3D<T>) -> f64 {
    pairwise_cost_with(pred, gt, &EvalConfig::default())
}

pub fn pairwise_cost_with<T: Real>(pred: &Lane3D<T>, gt: &Lane3D<T>, cfg: &EvalConfig) -> f64 {
    cost_from(&point_distances(pred, gt, cfg.tp_dist), cfg.squared_cost)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub point_distances: Vec<Option<f64>>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    /// Matched costs plus the unmatched penalty for every lane left over.
    pub total_cost: f64,
}

/// Cost of leaving one lane unmatched.
pub fn unmatched_cost(cfg: &EvalConfig, n_points: usize) -> f64 {
    cfg.tp_dist * (n_points as f64).sqrt()
}

/// Minimum-cost one-to-one matching with an unmatched penalty per lane.
pub fn match_lanes<T: Real>(preds: &[Lane3D<T>], gts: &[Lane3D<T>], cfg: &EvalConfig) -> MatchResult {
    let dists: Vec<Vec<Vec<Option<f64>>>> =
        preds.iter().map(|p| gts.iter().map(|g| point_distances(p, g, cfg.tp_dist)).collect()).collect();
    let costs: Vec<Vec<f64>> = dists.iter().map(|row| row.iter().map(|d| cost_from(d, cfg.squared_cost)).collect()).collect();
    let n_points = gts.first().or(preds.first()).map_or(0, |l| l.len());
    let rows: Vec<usize> = (0..preds.len()).collect();
    let pairs = match_subset(&costs, &rows, gts.len(), unmatched_cost(cfg, n_points));
    build_match(pairs, dists, &costs, preds.len(), gts.len(), unmatched_cost(cfg, n_points))
}

fn match_subset(costs: &[Vec<f64>], rows: &[usize], n_gt: usize, unmatched: f64) -> Vec<(usize, usize)> {
    let flat: Vec<Option<f64>> = rows.iter().flat_map(|&r| costs[r].iter().map(|&c| Some(c))).collect();
    match_with_dummies(&flat, rows.len(), n_gt, unmatched).into_iter().map(|(i, g)| (rows[i], g)).collect()
}

fn build_match(
    pairs: Vec<(usize, usize)>,
    mut dists: Vec<Vec<Vec<Option<f64>>>>,
    costs: &[Vec<f64>],
    n_pred: usize,
    n_gt: usize,
    unmatched: f64,
) -> MatchResult {
    let mut pm = vec![false; n_pred];
    let mut gm = vec![false; n_gt];
    let mut out = Vec::with_capacity(pairs.len());
    let mut total = 0.0;
    for (p, g) in pairs {
        pm[p] = true;
        gm[g] = true;
        total += costs[p][g];
        out.push(MatchedPair { pred: p, gt: g, point_distances: std::mem::take(&mut dists[p][g]), cost: costs[p][g] });
    }
    let unmatched_preds: Vec<usize> = (0..n_pred).filter(|&i| !pm[i]).collect();
    let unmatched_gts: Vec<usize> = (0..n_gt).filter(|&i| !gm[i]).collect();
    total += unmatched * (unmatched_preds.len() + unmatched_gts.len()) as f64;
    MatchResult { pairs: out, unmatched_preds, unmatched_gts, total_cost: total }
}

/// Whether more than `tp_point_frac` of the evaluated points lie closer than `tp_dist`.
pub fn is_true_positive(d: &[Option<f64>], cfg: &EvalConfig) -> bool {
    let evaluated = d.iter().flatten().count();
    if evaluated == 0 {
        return false;
    }
    let close = d.iter().flatten().filter(|&&v| v < cfg.tp_dist).count();
    close as f64 > cfg.tp_point_frac * evaluated as f64
}

/// Predictions and ground truth of one scene.
#[derive(Debug, Clone, Copy)]
pub struct SceneEval<'a, T: Real> {
    pub preds: &'a [Proposal<T>],
    pub gts: &'a [Lane3D<T>],
    pub ys: &'a YSampling<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    pub ap: f64,
    pub precision: f64,
    pub recall: f64,
    /// Score threshold at which the F1 maximum is reached.
    pub score_threshold: f64,
    pub x_err_close: f64,
    pub x_err_far: f64,
    pub z_err_close: f64,
    pub z_err_far: f64,
    pub category_accuracy: f64,
    pub n_gt: usize,
    pub n_pred: usize,
    pub n_tp: usize,
    pub n_points_close: usize,
    pub n_points_far: usize,
}

struct ScenePrep {
    dists: Vec<Vec<Vec<Option<f64>>>>,
    costs: Vec<Vec<f64>>,
    tp: Vec<Vec<bool>>,
    unmatched: f64,
}

fn prepare<T: Real>(s: &SceneEval<'_, T>, cfg: &EvalConfig) -> Result<ScenePrep, EvalError> {
    let n = s.ys.len();
    for l in s.gts.iter().chain(s.preds.iter().map(|p| &p.lane)) {
        if l.len() != n {
            return Err(EvalError::LengthMismatch { expected: n, got: l.len() });
        }
    }
    let dists: Vec<Vec<Vec<Option<f64>>>> =
        s.preds.iter().map(|p| s.gts.iter().map(|g| point_distances(&p.lane, g, cfg.tp_dist)).collect()).collect();
    let costs = dists.iter().map(|row| row.iter().map(|d| cost_from(d, cfg.squared_cost)).collect()).collect();
    let tp = dists.iter().map(|row| row.iter().map(|d| is_true_positive(d, cfg)).collect()).collect();
    Ok(ScenePrep { dists, costs, tp, unmatched: unmatched_cost(cfg, n) })
}

fn scene_tp(prep: &ScenePrep, kept: &[usize], n_gt: usize) -> Vec<(usize, usize)> {
    match_subset(&prep.costs, kept, n_gt, prep.unmatched).into_iter().filter(|&(p, g)| prep.tp[p][g]).collect()
}

/// Dataset-level matched metrics. F1 is maximized over score thresholds with
/// every scene re-matched at each threshold; errors and category accuracy are
/// reported at the best threshold over its true positives.
pub fn compute_metrics<T: Real>(scenes: &[SceneEval<'_, T>], cfg: &EvalConfig) -> Result<MetricsReport, EvalError> {
    cfg.validate()?;
    let n_gt: usize = scenes.iter().map(|s| s.gts.len()).sum();
    if n_gt == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    let preps: Vec<ScenePrep> = scenes.iter().map(|s| prepare(s, cfg)).collect::<Result<_, _>>()?;

    let mut order: Vec<(f64, usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(si, s)| s.preds.iter().enumerate().map(move |(pi, p)| (p.score.to_f64_lossy(), si, pi)))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    // Sweep thresholds from high to low; only scenes gaining predictions are re-matched.
    let mut kept: Vec<Vec<usize>> = vec![Vec::new(); scenes.len()];
    let mut tp_count = vec![0usize; scenes.len()];
    let mut curve: Vec<(f64, usize, usize)> = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let thr = order[i].0;
        let mut dirty = Vec::new();
        while i < order.len() && order[i].0 == thr {
            let (_, si, pi) = order[i];
            kept[si].push(pi);
            if dirty.last() != Some(&si) {
                dirty.push(si);
            }
            i += 1;
        }
        dirty.dedup();
        for si in dirty {
            tp_count[si] = scene_tp(&preps[si], &kept[si], scenes[si].gts.len()).len();
        }
        curve.push((thr, tp_count.iter().sum(), i));
    }

    let pr = |tp: usize, k: usize| -> (f64, f64) {
        let p = if k == 0 { 0.0 } else { tp as f64 / k as f64 };
        (p, tp as f64 / n_gt as f64)
    };
    let f1_of = |p: f64, r: f64| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };

    // All-point interpolated average precision.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let points: Vec<(f64, f64)> = curve.iter().map(|&(_, tp, k)| pr(tp, k)).collect();
    let mut envelope = vec![0.0; points.len()];
    let mut run = 0.0f64;
    for j in (0..points.len()).rev() {
        run = run.max(points[j].0);
        envelope[j] = run;
    }
    for (j, &(_, r)) in points.iter().enumerate() {
        if r > prev_recall {
            ap += (r - prev_recall) * envelope[j];
            prev_recall = r;
        }
    }

    let mut best: Option<(f64, f64, f64, f64)> = None;
    for (&(thr, _, _), &(p, r)) in curve.iter().zip(&points) {
        let f = f1_of(p, r);
        if best.is_none_or(|b| f > b.0) {
            best = Some((f, p, r, thr));
        }
    }
    let (f1, precision, recall, threshold) = best.unwrap_or((0.0, 0.0, 0.0, f64::INFINITY));

    // Errors and category accuracy at the selected threshold.
    let (mut xc, mut xf, mut zc, mut zf) = (0.0, 0.0, 0.0, 0.0);
    let (mut nc, mut nf) = (0usize, 0usize);
    let (mut n_tp, mut n_cat) = (0usize, 0usize);
    for (si, s) in scenes.iter().enumerate() {
        let chosen: Vec<usize> = (0..s.preds.len()).filter(|&p| s.preds[p].score.to_f64_lossy() >= threshold).collect();
        let ys = s.ys.values();
        for (p, g) in scene_tp(&preps[si], &chosen, s.gts.len()) {
            n_tp += 1;
            let (pl, gl) = (&s.preds[p].lane, &s.gts[g]);
            if pl.category == gl.category {
                n_cat += 1;
            }
            for (k, d) in preps[si].dists[p][g].iter().enumerate() {
                if d.is_none() || !pl.visible(k) {
                    continue;
                }
                let y = ys[k].to_f64_lossy();
                let ex = (pl.xs[k] - gl.xs[k]).to_f64_lossy().abs();
                let ez = (pl.zs[k] - gl.zs[k]).to_f64_lossy().abs();
                if y > cfg.close.0 && y <= cfg.close.1 {
                    xc += ex;
                    zc += ez;
                    nc += 1;
                } else if y > cfg.far.0 && y <= cfg.far.1 {
                    xf += ex;
                    zf += ez;
                    nf += 1;
                }
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(MetricsReport {
        f1,
        ap,
        precision,
        recall,
        score_threshold: if threshold.is_finite() { threshold } else { 1.0 },
        x_err_close: mean(xc, nc),
        x_err_far: mean(xf, nf),
        z_err_close: mean(zc, nc),
        z_err_far: mean(zf, nf),
        category_accuracy: if n_tp == 0 { 0.0 } else { n_cat as f64 / n_tp as f64 },
        n_gt,
        n_pred: order.len(),
        n_tp,
        n_points_close: nc,
        n_points_far: nf,
    })
}
