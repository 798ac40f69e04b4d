use serde::{Deserialize, Serialize};

use crate::anchor::YSampling;
use crate::lane::Lane3D;
use crate::scalar::Real;

use super::hungarian::match_with_dummies;
use super::SceneEval;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnceConfig {
    /// Chamfer threshold in meters.
    pub tau_cd: f64,
    /// Half-width of the dilated top-view polyline.
    pub half_width: f64,
    /// Raster cell size.
    pub resolution: f64,
    pub iou_threshold: f64,
    /// Predictions scoring below this are dropped first.
    pub min_score: f64,
}

impl Default for OnceConfig {
    fn default() -> Self {
        Self { tau_cd: 0.3, half_width: 0.5, resolution: 0.1, iou_threshold: 0.3, min_score: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnceReport {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Mean Chamfer distance over true positives.
    pub cd_error: f64,
    pub tau_cd: f64,
    pub n_tp: usize,
    pub n_pred: usize,
    pub n_gt: usize,
}

fn visible_points<T: Real>(lane: &Lane3D<T>, ys: &YSampling<T>) -> Vec<[f64; 3]> {
    (0..lane.len())
        .filter(|&k| lane.visible(k))
        .map(|k| [lane.xs[k].to_f64_lossy(), ys.values()[k].to_f64_lossy(), lane.zs[k].to_f64_lossy()])
        .collect()
}

fn point_segment_dist<const D: usize>(p: &[f64; 3], a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut ab = 0.0;
    let mut ap = 0.0;
    for i in 0..D {
        ab += (b[i] - a[i]) * (b[i] - a[i]);
        ap += (p[i] - a[i]) * (b[i] - a[i]);
    }
    let t = if ab > 0.0 { (ap / ab).clamp(0.0, 1.0) } else { 0.0 };
    (0..D).map(|i| (p[i] - (a[i] + t * (b[i] - a[i]))).powi(2)).sum::<f64>().sqrt()
}

fn polyline_dist<const D: usize>(p: &[f64; 3], line: &[[f64; 3]]) -> f64 {
    match line.len() {
        0 => f64::INFINITY,
        1 => point_segment_dist::<D>(p, &line[0], &line[0]),
        _ => line.windows(2).map(|w| point_segment_dist::<D>(p, &w[0], &w[1])).fold(f64::INFINITY, f64::min),
    }
}

/// Sorted raster cells `(ix, iy)` whose centers lie within `half_width` of the
/// lane's visible top-view polyline.
pub fn rasterize_top_view<T: Real>(lane: &Lane3D<T>, ys: &YSampling<T>, half_width: f64, resolution: f64) -> Vec<(i64, i64)> {
    let pts = visible_points(lane, ys);
    let mut cells = Vec::new();
    let segs: Vec<([f64; 3], [f64; 3])> = match pts.len() {
        0 => return cells,
        1 => vec![(pts[0], pts[0])],
        _ => pts.windows(2).map(|w| (w[0], w[1])).collect(),
    };
    for (a, b) in segs {
        let lo = |i: usize| ((a[i].min(b[i]) - half_width) / resolution).floor() as i64;
        let hi = |i: usize| ((a[i].max(b[i]) + half_width) / resolution).ceil() as i64;
        for ix in lo(0)..=hi(0) {
            for iy in lo(1)..=hi(1) {
                let c = [(ix as f64 + 0.5) * resolution, (iy as f64 + 0.5) * resolution, 0.0];
                if point_segment_dist::<2>(&c, &a, &b) <= half_width {
                    cells.push((ix, iy));
                }
            }
        }
    }
    cells.sort_unstable();
    cells.dedup();
    cells
}

fn iou_sorted(a: &[(i64, i64)], b: &[(i64, i64)]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn top_view_iou<T: Real>(a: &Lane3D<T>, b: &Lane3D<T>, ys: &YSampling<T>, cfg: &OnceConfig) -> f64 {
    iou_sorted(
        &rasterize_top_view(a, ys, cfg.half_width, cfg.resolution),
        &rasterize_top_view(b, ys, cfg.half_width, cfg.resolution),
    )
}

/// Mean distance from each visible prediction point to the ground-truth 3D polyline.
pub fn chamfer_unilateral<T: Real>(pred: &Lane3D<T>, gt: &Lane3D<T>, ys: &YSampling<T>) -> f64 {
    let p = visible_points(pred, ys);
    let g = visible_points(gt, ys);
    if p.is_empty() || g.is_empty() {
        return f64::INFINITY;
    }
    p.iter().map(|q| polyline_dist::<3>(q, &g)).sum::<f64>() / p.len() as f64
}

/// Top-view IoU gated matching (on `1 − IoU`) followed by the Chamfer test.
pub fn once_metrics<T: Real>(scenes: &[SceneEval<'_, T>], cfg: &OnceConfig) -> OnceReport {
    let (mut n_tp, mut n_pred, mut n_gt) = (0usize, 0usize, 0usize);
    let mut cd_sum = 0.0;
    for s in scenes {
        let preds: Vec<&Lane3D<T>> =
            s.preds.iter().filter(|p| p.score.to_f64_lossy() >= cfg.min_score).map(|p| &p.lane).collect();
        n_pred += preds.len();
        n_gt += s.gts.len();
        let pr: Vec<_> = preds.iter().map(|l| rasterize_top_view(l, s.ys, cfg.half_width, cfg.resolution)).collect();
        let gr: Vec<_> = s.gts.iter().map(|l| rasterize_top_view(l, s.ys, cfg.half_width, cfg.resolution)).collect();
        let mut cost = Vec::with_capacity(pr.len() * gr.len());
        for a in &pr {
            for b in &gr {
                let iou = iou_sorted(a, b);
                cost.push((iou >= cfg.iou_threshold).then_some(1.0 - iou));
            }
        }
        for (p, g) in match_with_dummies(&cost, pr.len(), gr.len(), 1.0) {
            let cd = chamfer_unilateral(preds[p], &s.gts[g], s.ys);
            if cd < cfg.tau_cd {
                n_tp += 1;
                cd_sum += cd;
            }
        }
    }
    let precision = if n_pred == 0 { 0.0 } else { n_tp as f64 / n_pred as f64 };
    let recall = if n_gt == 0 { 0.0 } else { n_tp as f64 / n_gt as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    OnceReport {
        f1,
        precision,
        recall,
        cd_error: if n_tp == 0 { 0.0 } else { cd_sum / n_tp as f64 },
        tau_cd: cfg.tau_cd,
        n_tp,
        n_pred,
        n_gt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor::ONCE_Y_SAMPLES;
    use crate::lane::Proposal;
    use approx::assert_abs_diff_eq;

    fn ys() -> YSampling<f64> {
        YSampling::new(ONCE_Y_SAMPLES.to_vec()).unwrap()
    }

    fn lane(x: f64) -> Lane3D<f64> {
        Lane3D::new(vec![x; 10], vec![-1.5; 10], vec![1.0; 10], 1).unwrap()
    }

    fn run(gts: &[Lane3D<f64>], preds: &[Lane3D<f64>]) -> OnceReport {
        let y = ys();
        let props: Vec<_> = preds.iter().map(|l| Proposal::new(l.clone(), vec![0.1, 0.9])).collect();
        once_metrics(&[SceneEval { preds: &props, gts, ys: &y }], &OnceConfig::default())
    }

    #[test]
    fn self_evaluation() {
        let gts = vec![lane(-1.8), lane(1.8)];
        let r = run(&gts, &gts);
        assert_eq!((r.precision, r.recall, r.f1, r.cd_error), (1.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn small_offset_is_true_positive_with_matching_cd() {
        let r = run(&[lane(0.05)], &[lane(0.25)]);
        assert_eq!(r.n_tp, 1);
        assert_abs_diff_eq!(r.cd_error, 0.2, epsilon = 1e-9);
    }

    #[test]
    fn large_offset_is_false_positive() {
        let y = ys();
        assert!(top_view_iou(&lane(0.05), &lane(0.55), &y, &OnceConfig::default()) >= 0.3);
        let r = run(&[lane(0.05)], &[lane(0.55)]);
        assert_eq!(r.n_tp, 0);
        assert_eq!(r.precision, 0.0);
    }

    #[test]
    fn chamfer_matches_brute_force_nearest_point() {
        let y = ys();
        let gt = Lane3D::new(y.values().iter().map(|&v| 0.01 * v * v).collect(), vec![0.0; 10], vec![1.0; 10], 1).unwrap();
        let pred = Lane3D::new(y.values().iter().map(|&v| 0.01 * v * v + 0.3).collect(), vec![0.1; 10], vec![1.0; 10], 1)
            .unwrap();
        // Dense resampling of the ground-truth polyline as the oracle.
        let g = visible_points(&gt, &y);
        let mut dense = Vec::new();
        for w in g.windows(2) {
            for s in 0..=2000 {
                let t = s as f64 / 2000.0;
                dense.push([0, 1, 2].map(|i| w[0][i] + t * (w[1][i] - w[0][i])));
            }
        }
        let p = visible_points(&pred, &y);
        let oracle = p
            .iter()
            .map(|q| dense.iter().map(|d| (0..3).map(|i| (q[i] - d[i]).powi(2)).sum::<f64>().sqrt()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / p.len() as f64;
        assert_abs_diff_eq!(chamfer_unilateral(&pred, &gt, &y), oracle, epsilon = 1e-3);
    }

    #[test]
    fn raster_area_matches_strip() {
        let y = ys();
        let cells = rasterize_top_view(&lane(0.02), &y, 0.5, 0.1);
        // 48 m long, 1 m wide strip plus round caps ≈ 48.785 m² at 0.01 m² per cell.
        let area = cells.len() as f64 * 0.01;
        assert!((area - (48.0 + std::f64::consts::PI * 0.25)).abs() < 1.0, "{area}");
    }
}
