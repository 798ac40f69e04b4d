use crate::anchor::Anchor;
use crate::lane::{assign_from_distances, assign_within_radius, distance_matrix, Lane3D, LaneError};
use crate::scalar::Real;

use super::{Prediction, TrainConfig};

pub(crate) const PROB_FLOOR: f64 = 1e-7;

/// Per-anchor class targets and positive `(gt, anchor)` pairs for one scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTargets {
    pub class_targets: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
}

impl LossTargets {
    /// Assigns the `n_positives` nearest anchors to each lane.
    pub fn assign<T: Real>(gts: &[Lane3D<T>], anchors: &[Anchor<T>], n_positives: usize) -> Result<Self, LaneError> {
        if gts.is_empty() {
            return Ok(Self { class_targets: vec![0; anchors.len()], pairs: Vec::new() });
        }
        let dists = distance_matrix(gts, anchors)?;
        let a = assign_from_distances(&dists, anchors.len(), n_positives)?;
        Ok(Self { class_targets: a.class_targets(gts, anchors.len(), &dists), pairs: a.pairs })
    }

    /// Targets for refined anchors, which crowd onto lanes: besides the
    /// `n_positives` nearest, anchors within `radius` of a lane are positive too.
    pub fn assign_refined<T: Real>(gts: &[Lane3D<T>], anchors: &[Anchor<T>], n_positives: usize, radius: T) -> Result<Self, LaneError> {
        if gts.is_empty() {
            return Ok(Self { class_targets: vec![0; anchors.len()], pairs: Vec::new() });
        }
        let dists = distance_matrix(gts, anchors)?;
        let a = assign_within_radius(&dists, anchors.len(), n_positives, radius)?;
        Ok(Self { class_targets: a.class_targets(gts, anchors.len(), &dists), pairs: a.pairs })
    }
}

/// `−α (1−p)^γ log p` with `p` clamped away from 0 and 1.
pub fn focal_term<T: Real>(p: T, alpha: T, gamma: T) -> T {
    let p = clamp_prob(p);
    -alpha * (T::one() - p).powf(gamma) * p.ln()
}

fn clamp_prob<T: Real>(p: T) -> T {
    let lo = T::lit(PROB_FLOOR);
    p.max(lo).min(T::one() - lo)
}

/// Focal term of one anchor; accumulates `scale · ∂/∂logits` into `dlogits`.
pub(crate) fn cls_term_grad<T: Real>(
    probs: &[T],
    target: usize,
    alpha: T,
    gamma: T,
    scale: T,
    dlogits: Option<&mut [T]>,
) -> T {
    let raw = probs[target];
    let value = focal_term(raw, alpha, gamma);
    if let Some(dl) = dlogits {
        let lo = T::lit(PROB_FLOOR);
        if raw > lo && raw < T::one() - lo {
            let q = T::one() - raw;
            let dp = if gamma == T::zero() {
                -alpha / raw
            } else {
                alpha * gamma * q.powf(gamma - T::one()) * raw.ln() - alpha * q.powf(gamma) / raw
            };
            for (l, d) in dl.iter_mut().enumerate() {
                let delta = if l == target { T::one() } else { T::zero() };
                *d += scale * dp * raw * (delta - probs[l]);
            }
        }
    }
    value
}

/// Regression term of one positive pair; accumulates gradients w.r.t. offsets
/// (`Δx ‖ Δz`) and visibility logits.
#[allow(clippy::too_many_arguments)]
pub(crate) fn reg_term_grad<T: Real>(
    dx: &[T],
    dz: &[T],
    vis: &[T],
    anchor: &Anchor<T>,
    gt: &Lane3D<T>,
    scale: T,
    grads: Option<(&mut [T], &mut [T])>,
) -> T {
    let n = dx.len();
    let mut total = T::zero();
    let mut grads = grads;
    for k in 0..n {
        let w = gt.vis[k];
        let rx = anchor.points[k].x + dx[k] - gt.xs[k];
        let rz = anchor.points[k].z + dz[k] - gt.zs[k];
        let rv = vis[k] - gt.vis[k];
        total += (w * rx).abs() + (w * rz).abs() + rv.abs();
        if let Some((doff, dvl)) = grads.as_mut() {
            doff[k] += scale * w.abs() * rx.sign0();
            doff[n + k] += scale * w.abs() * rz.sign0();
            dvl[k] += scale * rv.sign0() * vis[k] * (T::one() - vis[k]);
        }
    }
    total
}

/// Mean focal loss over all anchors.
pub fn classification_loss<T: Real>(preds: &[Prediction<T>], targets: &LossTargets, cfg: &TrainConfig) -> T {
    if preds.is_empty() {
        return T::zero();
    }
    let (alpha, gamma) = (T::lit(cfg.focal_alpha), T::lit(cfg.focal_gamma));
    let sum: T = preds
        .iter()
        .zip(&targets.class_targets)
        .map(|(p, &t)| cls_term_grad(&p.class_probs, t, alpha, gamma, T::zero(), None))
        .sum();
    sum / T::lit(preds.len() as f64)
}

/// Mean visibility-weighted L1 loss over positive pairs.
pub fn regression_loss<T: Real>(
    preds: &[Prediction<T>],
    anchors: &[Anchor<T>],
    gts: &[Lane3D<T>],
    targets: &LossTargets,
) -> T {
    if targets.pairs.is_empty() {
        return T::zero();
    }
    let sum: T = targets
        .pairs
        .iter()
        .map(|&(g, a)| {
            let p = &preds[a];
            reg_term_grad(&p.dx, &p.dz, &p.vis, &anchors[a], &gts[g], T::zero(), None)
        })
        .sum();
    sum / T::lit(targets.pairs.len() as f64)
}

pub fn total_loss<T: Real>(
    preds: &[Prediction<T>],
    anchors: &[Anchor<T>],
    gts: &[Lane3D<T>],
    targets: &LossTargets,
    cfg: &TrainConfig,
) -> T {
    T::lit(cfg.lambda_cls) * classification_loss(preds, targets, cfg)
        + T::lit(cfg.lambda_reg) * regression_loss(preds, anchors, gts, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor::{build_anchor, AnchorParams, YSampling};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pred(probs: Vec<f64>, dx: Vec<f64>, dz: Vec<f64>, vis: Vec<f64>) -> Prediction<f64> {
        Prediction { class_probs: probs, dx, dz, vis }
    }

    fn flat_anchor(x: f64, n: usize) -> Anchor<f64> {
        let ys = YSampling::new((1..=n).map(|k| 5.0 * k as f64).collect()).unwrap();
        build_anchor(AnchorParams::new(x, 0.0, 0.0, 0.0).unwrap(), &ys)
    }

    #[test]
    fn focal_scalar_values() {
        assert_abs_diff_eq!(focal_term(1.0f64, 0.5, 2.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(focal_term(0.5f64, 0.5, 2.0), 0.5 * 0.25 * 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(focal_term(0.5f64, 0.5, 2.0), 0.08664, epsilon = 1e-5);
        // Near-zero probabilities are clamped, so the value stays finite.
        assert!(focal_term(0.0f64, 0.5, 2.0).is_finite());
    }

    #[test]
    fn uniform_two_class_loss_is_closed_form() {
        let cfg = TrainConfig::default();
        let preds = vec![pred(vec![0.5, 0.5], vec![], vec![], vec![]); 5];
        let targets = LossTargets { class_targets: vec![0, 1, 1, 0, 1], pairs: vec![] };
        let expected = 0.5 * 0.5f64.powi(2) * 2f64.ln();
        assert_abs_diff_eq!(classification_loss(&preds, &targets, &cfg), expected, epsilon = 1e-15);
    }

    #[test]
    fn exact_regression_is_zero_and_single_offset_is_l1() {
        let a = flat_anchor(1.0, 3);
        let gt = Lane3D::new(vec![1.0; 3], vec![0.0; 3], vec![1.0, 0.0, 0.0], 1).unwrap();
        let targets = LossTargets { class_targets: vec![1], pairs: vec![(0, 0)] };
        let exact = pred(vec![0.0, 1.0], vec![0.0; 3], vec![0.0; 3], vec![1.0, 0.0, 0.0]);
        assert_eq!(regression_loss(&[exact], std::slice::from_ref(&a), std::slice::from_ref(&gt), &targets), 0.0);
        let off = pred(vec![0.0, 1.0], vec![0.3, 0.0, 0.0], vec![0.0; 3], vec![1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(regression_loss(&[off], &[a], &[gt], &targets), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn regression_matches_term_by_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4;
        let anchors: Vec<_> = (0..3).map(|i| flat_anchor(i as f64, n)).collect();
        let gts: Vec<_> = (0..2)
            .map(|_| {
                Lane3D::new(
                    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                    (0..n).map(|k| if k == 2 { 0.0 } else { 1.0 }).collect(),
                    1,
                )
                .unwrap()
            })
            .collect();
        let preds: Vec<_> = (0..3)
            .map(|_| {
                pred(
                    vec![0.3, 0.7],
                    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
                )
            })
            .collect();
        let pairs = vec![(0, 0), (0, 2), (1, 1)];
        let targets = LossTargets { class_targets: vec![1, 1, 1], pairs: pairs.clone() };
        let mut oracle = 0.0;
        for &(g, a) in &pairs {
            for k in 0..n {
                let v = gts[g].vis[k];
                oracle += (v * (a as f64 + preds[a].dx[k] - gts[g].xs[k])).abs();
                oracle += (v * (preds[a].dz[k] - gts[g].zs[k])).abs();
                oracle += (v - preds[a].vis[k]).abs();
            }
        }
        oracle /= 3.0;
        assert_abs_diff_eq!(regression_loss(&preds, &anchors, &gts, &targets), oracle, epsilon = 1e-12);
    }

    #[test]
    fn total_loss_combines_weights() {
        let a = flat_anchor(0.0, 2);
        let gt = Lane3D::new(vec![0.5, 0.5], vec![0.0; 2], vec![1.0; 2], 1).unwrap();
        let preds = vec![pred(vec![0.4, 0.6], vec![0.0; 2], vec![0.0; 2], vec![0.9, 0.9])];
        let targets = LossTargets { class_targets: vec![1], pairs: vec![(0, 0)] };
        let anchors = [a];
        let gts = [gt];
        let mut cfg = TrainConfig { lambda_reg: 0.0, ..TrainConfig::default() };
        let cls = classification_loss(&preds, &targets, &cfg);
        assert_eq!(total_loss(&preds, &anchors, &gts, &targets, &cfg), cls);
        cfg.lambda_reg = 1.0;
        let reg = regression_loss(&preds, &anchors, &gts, &targets);
        assert_abs_diff_eq!(total_loss(&preds, &anchors, &gts, &targets, &cfg), cls + reg, epsilon = 1e-15);
        assert!(cls > 0.0 && reg > 0.0);
    }

    #[test]
    fn assignment_targets_use_nearest_lane_category() {
        let anchors: Vec<_> = (0..5).map(|i| flat_anchor(i as f64, 2)).collect();
        let gts = vec![
            Lane3D::new(vec![0.1; 2], vec![0.0; 2], vec![1.0; 2], 2).unwrap(),
            Lane3D::new(vec![3.9; 2], vec![0.0; 2], vec![1.0; 2], 3).unwrap(),
        ];
        let t = LossTargets::assign(&gts, &anchors, 2).unwrap();
        assert_eq!(t.class_targets, vec![2, 2, 0, 3, 3]);
        assert_eq!(t.pairs.len(), 4);
        let none = LossTargets::assign::<f64>(&[], &anchors, 2).unwrap();
        assert_eq!(none.class_targets, vec![0; 5]);
    }
}
