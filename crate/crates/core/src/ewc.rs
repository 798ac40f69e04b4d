//! Equal-width post-optimization of lane x-coordinates: neighbouring lanes are
//! nudged so that their heading-corrected separation stays constant along y.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::YSampling;
use crate::lane::{Lane3D, Proposal};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EwcError {
    #[error("equal-width refinement needs at least two lanes, got {0}")]
    TooFewLanes(usize),
    #[error("lane length {got} does not match {expected} y-samples")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EwcConfig {
    pub alpha: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Pairs whose raw width changes faster than this (m per m of y) are forks.
    pub fork_slope_threshold: f64,
}

impl Default for EwcConfig {
    fn default() -> Self {
        Self { alpha: 0.1, steps: 200, step_size: 1e-2, fork_slope_threshold: 0.05 }
    }
}

impl EwcConfig {
    pub fn validate(&self) -> Result<(), EwcError> {
        if !(self.alpha >= 0.0) {
            return Err(EwcError::InvalidConfig("alpha must be non-negative"));
        }
        if !(self.step_size > 0.0) {
            return Err(EwcError::InvalidConfig("step_size must be positive"));
        }
        if !(self.fork_slope_threshold >= 0.0) {
            return Err(EwcError::InvalidConfig("fork_slope_threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Per-lane x adjustments.
#[derive(Debug, Clone, PartialEq)]
pub struct EwcAdjustment<T> {
    pub dx: Vec<Vec<T>>,
}

impl<T: Real> EwcAdjustment<T> {
    pub fn zeros(q: usize, n: usize) -> Self {
        Self { dx: vec![vec![T::zero(); n]; q] }
    }

    pub fn max_abs(&self) -> T {
        self.dx.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EwcReport<T> {
    pub adjustment: EwcAdjustment<T>,
    pub initial_objective: T,
    pub final_objective: T,
    /// Objective after every accepted step.
    pub trace: Vec<T>,
    pub pairs_used: usize,
    pub fork_pairs: usize,
}

/// Slope dx/dy of `xs` at each of the listed indices, central differences
/// between listed neighbours, one-sided at the ends.
fn slopes<T: Real>(xs: &[T], ys: &[T], idx: &[usize]) -> Vec<(T, Option<(usize, usize, T)>)> {
    let m = idx.len();
    (0..m)
        .map(|p| {
            if m < 2 {
                return (T::zero(), None);
            }
            let (lo, hi) = (idx[p.saturating_sub(1)], idx[(p + 1).min(m - 1)]);
            let inv = T::one() / (ys[hi] - ys[lo]);
            ((xs[hi] - xs[lo]) * inv, Some((lo, hi, inv)))
        })
        .collect()
}

fn visible_idx<T: Real>(lane: &Lane3D<T>) -> Vec<usize> {
    (0..lane.len()).filter(|&k| lane.visible(k)).collect()
}

fn adjusted<T: Real>(lane: &Lane3D<T>, adj: &[T]) -> Vec<T> {
    lane.xs.iter().zip(adj).map(|(&x, &d)| x + d).collect()
}

/// Heading-corrected widths `|cos θ_a · (x_a + Δ_a − x_b − Δ_b)|` at every
/// y-sample, with θ_a the heading of the adjusted lane `a` over its visible points.
pub fn pair_width_profile<T: Real>(a: &Lane3D<T>, b: &Lane3D<T>, adj_a: &[T], adj_b: &[T], ys: &YSampling<T>) -> Vec<T> {
    let xa = adjusted(a, adj_a);
    let xb = adjusted(b, adj_b);
    let vis = visible_idx(a);
    let mut cos = vec![T::one(); a.len()];
    let idx = if vis.len() >= 2 { vis } else { (0..a.len()).collect() };
    for (p, (s, _)) in slopes(&xa, ys.values(), &idx).into_iter().enumerate() {
        cos[idx[p]] = T::one() / (T::one() + s * s).sqrt();
    }
    (0..a.len()).map(|k| (cos[k] * (xa[k] - xb[k])).abs()).collect()
}

/// `Σ_k |w_k − mean(w)|`.
pub fn width_variation<T: Real>(w: &[T]) -> T {
    if w.is_empty() {
        return T::zero();
    }
    let mean = w.iter().copied().sum::<T>() / T::lit(w.len() as f64);
    w.iter().map(|&v| (v - mean).abs()).sum()
}

fn common_visible<T: Real>(a: &Lane3D<T>, b: &Lane3D<T>) -> Vec<usize> {
    (0..a.len()).filter(|&k| a.visible(k) && b.visible(k)).collect()
}

const MIN_COMMON: usize = 3;

struct Problem<'a, T: Real> {
    lanes: &'a [Lane3D<T>],
    ys: &'a YSampling<T>,
    /// Ordered pairs with their common visible indices.
    pairs: Vec<(usize, usize, Vec<usize>)>,
    alpha: T,
}

impl<'a, T: Real> Problem<'a, T> {
    fn new(lanes: &'a [Lane3D<T>], ys: &'a YSampling<T>, alpha: T, fork: Option<T>) -> Result<(Self, usize), EwcError> {
        if lanes.len() < 2 {
            return Err(EwcError::TooFewLanes(lanes.len()));
        }
        if let Some(l) = lanes.iter().find(|l| l.len() != ys.len()) {
            return Err(EwcError::LengthMismatch { expected: ys.len(), got: l.len() });
        }
        let mut pairs = Vec::new();
        let mut forks = 0;
        for a in 0..lanes.len() {
            for b in a + 1..lanes.len() {
                let common = common_visible(&lanes[a], &lanes[b]);
                if common.len() < MIN_COMMON {
                    continue;
                }
                if fork.is_some_and(|limit| is_fork(&lanes[a], &lanes[b], &common, ys, limit)) {
                    forks += 1;
                    continue;
                }
                pairs.push((a, b, common.clone()));
                pairs.push((b, a, common));
            }
        }
        Ok((Self { lanes, ys, pairs, alpha }, forks))
    }

    fn q(&self) -> T {
        T::lit(self.lanes.len() as f64)
    }

    /// Objective value and, when requested, its gradient.
    fn eval(&self, adj: &EwcAdjustment<T>, grad: Option<&mut EwcAdjustment<T>>) -> T {
        let q = self.q();
        let pair_scale = T::one() / (q * (q - T::one()));
        let ys = self.ys.values();
        let mut total = T::zero();
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.dx.iter_mut().flatten().for_each(|v| *v = T::zero());
        }
        for (a, b, common) in &self.pairs {
            let (la, lb) = (&self.lanes[*a], &self.lanes[*b]);
            let xa = adjusted(la, &adj.dx[*a]);
            let xb = adjusted(lb, &adj.dx[*b]);
            let vis = visible_idx(la);
            let idx = if vis.len() >= 2 { vis } else { (0..la.len()).collect() };
            let sl = slopes(&xa, ys, &idx);
            let mut slope_at: Vec<Option<(T, Option<(usize, usize, T)>)>> = vec![None; la.len()];
            for (p, s) in sl.into_iter().enumerate() {
                slope_at[idx[p]] = Some(s);
            }
            let mut w = Vec::with_capacity(common.len());
            let mut parts = Vec::with_capacity(common.len());
            for &k in common {
                let (s, link) = slope_at[k].unwrap_or((T::zero(), None));
                let root = (T::one() + s * s).sqrt();
                let c = T::one() / root;
                let gap = xa[k] - xb[k];
                w.push((c * gap).abs());
                parts.push((k, s, c, root, gap, link));
            }
            total += pair_scale * width_variation(&w);
            if let Some(g) = grad.as_deref_mut() {
                let m = w.iter().copied().sum::<T>() / T::lit(w.len() as f64);
                let signs: Vec<T> = w.iter().map(|&v| (v - m).sign0()).collect();
                let sign_mean = signs.iter().copied().sum::<T>() / T::lit(w.len() as f64);
                for (i, &(k, s, c, root, gap, link)) in parts.iter().enumerate() {
                    let dw = pair_scale * (signs[i] - sign_mean);
                    if dw == T::zero() {
                        continue;
                    }
                    let sg = gap.sign0();
                    g.dx[*a][k] += dw * c * sg;
                    g.dx[*b][k] -= dw * c * sg;
                    if let Some((lo, hi, inv)) = link {
                        // d|c·gap|/ds = −|gap| · s / (1+s²)^{3/2}
                        let ds = -dw * gap.abs() * s / (root * root * root);
                        g.dx[*a][hi] += ds * inv;
                        g.dx[*a][lo] -= ds * inv;
                    }
                }
            }
        }
        let reg_scale = self.alpha / q;
        for (j, d) in adj.dx.iter().enumerate() {
            let norm = d.iter().map(|&v| v * v).sum::<T>().sqrt();
            total += reg_scale * norm;
            if let Some(g) = grad.as_deref_mut() {
                if norm > T::zero() {
                    for (gk, &dk) in g.dx[j].iter_mut().zip(d) {
                        *gk += reg_scale * dk / norm;
                    }
                }
            }
        }
        total
    }
}

fn is_fork<T: Real>(a: &Lane3D<T>, b: &Lane3D<T>, common: &[usize], ys: &YSampling<T>, limit: T) -> bool {
    let zero = vec![T::zero(); a.len()];
    let w = pair_width_profile(a, b, &zero, &zero, ys);
    let y = ys.values();
    let n = T::lit(common.len() as f64);
    let my = common.iter().map(|&k| y[k]).sum::<T>() / n;
    let mw = common.iter().map(|&k| w[k]).sum::<T>() / n;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for &k in common {
        sxy += (y[k] - my) * (w[k] - mw);
        sxx += (y[k] - my) * (y[k] - my);
    }
    sxx > T::zero() && (sxy / sxx).abs() > limit
}

/// Equal-width objective over every ordered lane pair sharing at least three
/// visible points (forks included).
pub fn ewc_objective<T: Real>(lanes: &[Lane3D<T>], adj: &EwcAdjustment<T>, alpha: T, ys: &YSampling<T>) -> Result<T, EwcError> {
    let (p, _) = Problem::new(lanes, ys, alpha, None)?;
    check_adj(lanes, adj)?;
    Ok(p.eval(adj, None))
}

/// Objective and analytic gradient with respect to the adjustments.
pub fn ewc_gradient<T: Real>(
    lanes: &[Lane3D<T>],
    adj: &EwcAdjustment<T>,
    alpha: T,
    ys: &YSampling<T>,
) -> Result<(T, EwcAdjustment<T>), EwcError> {
    let (p, _) = Problem::new(lanes, ys, alpha, None)?;
    check_adj(lanes, adj)?;
    let mut g = EwcAdjustment::zeros(lanes.len(), ys.len());
    let v = p.eval(adj, Some(&mut g));
    Ok((v, g))
}

fn check_adj<T: Real>(lanes: &[Lane3D<T>], adj: &EwcAdjustment<T>) -> Result<(), EwcError> {
    if adj.dx.len() != lanes.len() {
        return Err(EwcError::LengthMismatch { expected: lanes.len(), got: adj.dx.len() });
    }
    if let Some((d, l)) = adj.dx.iter().zip(lanes).find(|(d, l)| d.len() != l.len()) {
        return Err(EwcError::LengthMismatch { expected: l.len(), got: d.len() });
    }
    Ok(())
}

/// Gradient descent with step halving whenever a step would raise the objective.
pub fn optimize_with_report<T: Real>(
    lanes: &[Lane3D<T>],
    ys: &YSampling<T>,
    cfg: &EwcConfig,
) -> Result<EwcReport<T>, EwcError> {
    cfg.validate()?;
    let (problem, fork_pairs) = Problem::new(lanes, ys, T::lit(cfg.alpha), Some(T::lit(cfg.fork_slope_threshold)))?;
    let (q, n) = (lanes.len(), ys.len());
    let mut adj = EwcAdjustment::zeros(q, n);
    let mut grad = EwcAdjustment::zeros(q, n);
    let mut f = problem.eval(&adj, Some(&mut grad));
    let initial = f;
    let mut step = T::lit(cfg.step_size);
    let mut trace = Vec::new();
    for _ in 0..cfg.steps {
        let mut cand = adj.clone();
        for (c, g) in cand.dx.iter_mut().flatten().zip(grad.dx.iter().flatten()) {
            *c -= step * *g;
        }
        let mut cand_grad = EwcAdjustment::zeros(q, n);
        let fc = problem.eval(&cand, Some(&mut cand_grad));
        if fc <= f {
            adj = cand;
            grad = cand_grad;
            f = fc;
            trace.push(f);
        } else {
            step = step * T::lit(0.5);
        }
    }
    Ok(EwcReport {
        adjustment: adj,
        initial_objective: initial,
        final_objective: f,
        trace,
        pairs_used: problem.pairs.len(),
        fork_pairs,
    })
}

/// Refined copies of `lanes` (x only). Fewer than two lanes are returned unchanged.
pub fn optimize_equal_width<T: Real>(lanes: &[Lane3D<T>], ys: &YSampling<T>, cfg: &EwcConfig) -> Result<Vec<Lane3D<T>>, EwcError> {
    match optimize_with_report(lanes, ys, cfg) {
        Ok(r) => Ok(apply(lanes, &r.adjustment)),
        Err(EwcError::TooFewLanes(_)) => Ok(lanes.to_vec()),
        Err(e) => Err(e),
    }
}

/// Same as [`optimize_equal_width`] on proposals, keeping scores and class probabilities.
pub fn optimize_proposals<T: Real>(props: &[Proposal<T>], ys: &YSampling<T>, cfg: &EwcConfig) -> Result<Vec<Proposal<T>>, EwcError> {
    let lanes: Vec<_> = props.iter().map(|p| p.lane.clone()).collect();
    let refined = optimize_equal_width(&lanes, ys, cfg)?;
    Ok(props.iter().zip(refined).map(|(p, lane)| Proposal { lane, ..p.clone() }).collect())
}

fn apply<T: Real>(lanes: &[Lane3D<T>], adj: &EwcAdjustment<T>) -> Vec<Lane3D<T>> {
    lanes
        .iter()
        .zip(&adj.dx)
        .map(|(l, d)| Lane3D { xs: adjusted(l, d), ..l.clone() })
        .collect()
}
