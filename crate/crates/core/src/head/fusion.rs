use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sampling::AnchorFeature;
use crate::scalar::Real;

use super::optim::AdamMoments;
use super::{softmax_into, HeadError};

/// How current and transported previous-frame anchor features are combined.
/// Initial gate logits `(+b, -b)`: the current frame starts with weight ~0.9975.
const GATE_BIAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    /// Learned affine map from the concatenated `2C` channels back to `C`.
    LinearFusion,
    /// Per-point softmax gate producing one weight per frame.
    WeightedSum,
}

impl FromStr for FusionStrategy {
    type Err = HeadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear_fusion" | "linear" => Ok(Self::LinearFusion),
            "weighted_sum" | "weighted" => Ok(Self::WeightedSum),
            other => Err(HeadError::UnknownStrategy(other.to_string())),
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LinearFusion => "linear_fusion",
            Self::WeightedSum => "weighted_sum",
        })
    }
}

/// Trainable fusion weights.
///
/// Linear fusion: `W (C × 2C)` then bias `C`.
/// Weighted sum: gate `G (2 × 2C)` then per-point gate bias `N × 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T> {
    pub strategy: FusionStrategy,
    pub n: usize,
    pub c: usize,
    values: Vec<T>,
    pub(crate) moments: AdamMoments<T>,
}

impl<T: Real> FusionParams<T> {
    pub fn param_count(strategy: FusionStrategy, n: usize, c: usize) -> usize {
        match strategy {
            FusionStrategy::LinearFusion => c * 2 * c + c,
            FusionStrategy::WeightedSum => 2 * 2 * c + 2 * n,
        }
    }

    /// Starts close to "use the current frame": identity on the current block
    /// for linear fusion, a gate biased towards the current frame for the weighted sum.
    pub fn init(strategy: FusionStrategy, n: usize, c: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = Self::param_count(strategy, n, c);
        let mut values = vec![T::zero(); count];
        match strategy {
            FusionStrategy::LinearFusion => {
                for row in 0..c {
                    for col in 0..2 * c {
                        let noise = T::lit(rng.gen_range(-0.01..0.01));
                        values[row * 2 * c + col] = if col == row { T::one() } else { noise };
                    }
                }
            }
            FusionStrategy::WeightedSum => {
                for v in &mut values[..4 * c] {
                    *v = T::lit(rng.gen_range(-0.01..0.01));
                }
                for k in 0..n {
                    values[4 * c + 2 * k] = T::lit(GATE_BIAS);
                    values[4 * c + 2 * k + 1] = T::lit(-GATE_BIAS);
                }
            }
        }
        Self { strategy, n, c, values, moments: AdamMoments::new(count) }
    }

    pub fn from_values(strategy: FusionStrategy, n: usize, c: usize, values: Vec<T>) -> Result<Self, HeadError> {
        let count = Self::param_count(strategy, n, c);
        if values.len() != count {
            return Err(HeadError::ShapeMismatch(format!("fusion expects {count} parameters, got {}", values.len())));
        }
        Ok(Self { strategy, n, c, values, moments: AdamMoments::new(count) })
    }

    /// Linear fusion with the given `C × 2C` matrix and bias.
    pub fn linear(c: usize, n: usize, matrix: &[T], bias: &[T]) -> Result<Self, HeadError> {
        if matrix.len() != 2 * c * c || bias.len() != c {
            return Err(HeadError::ShapeMismatch("linear fusion matrix must be C x 2C".into()));
        }
        let mut values = matrix.to_vec();
        values.extend_from_slice(bias);
        Self::from_values(FusionStrategy::LinearFusion, n, c, values)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    fn check(&self, cur: &AnchorFeature<T>, prev: &AnchorFeature<T>) -> Result<(), HeadError> {
        if cur.n != prev.n || cur.c != prev.c || cur.c != self.c || cur.n != self.n {
            return Err(HeadError::ShapeMismatch(format!(
                "fusion {}x{} cannot combine {}x{} with {}x{}",
                self.n, self.c, cur.n, cur.c, prev.n, prev.c
            )));
        }
        Ok(())
    }

    /// Gate weights `(w_cur, w_prev)` for point `k` given the stacked input `z`.
    fn gate(&self, k: usize, z: &[T]) -> [T; 2] {
        let c2 = 2 * self.c;
        let mut logits = [T::zero(); 2];
        for (f, l) in logits.iter_mut().enumerate() {
            let mut acc = self.values[4 * self.c + 2 * k + f];
            for i in 0..c2 {
                acc += self.values[f * c2 + i] * z[i];
            }
            *l = acc;
        }
        let mut w = [T::zero(); 2];
        softmax_into(&logits, &mut w);
        w
    }

    pub(crate) fn forward_into(&self, cur: &AnchorFeature<T>, prev: &AnchorFeature<T>, out: &mut AnchorFeature<T>) {
        let c = self.c;
        let mut z = vec![T::zero(); 2 * c];
        for k in 0..self.n {
            z[..c].copy_from_slice(cur.point(k));
            z[c..].copy_from_slice(prev.point(k));
            let dst = &mut out.per_point[k * c..(k + 1) * c];
            match self.strategy {
                FusionStrategy::LinearFusion => {
                    for (row, d) in dst.iter_mut().enumerate() {
                        let w = &self.values[row * 2 * c..(row + 1) * 2 * c];
                        let mut acc = self.values[2 * c * c + row];
                        for i in 0..2 * c {
                            acc += w[i] * z[i];
                        }
                        *d = acc;
                    }
                }
                FusionStrategy::WeightedSum => {
                    let [w0, w1] = self.gate(k, &z);
                    for (ch, d) in dst.iter_mut().enumerate() {
                        *d = w0 * z[ch] + w1 * z[c + ch];
                    }
                }
            }
            out.valid_mask[k] = cur.valid_mask[k] || prev.valid_mask[k];
        }
    }

    /// Accumulates parameter gradients given `∂L/∂fused` for one anchor.
    pub(crate) fn backward(&self, cur: &AnchorFeature<T>, prev: &AnchorFeature<T>, dfused: &[T], grad: &mut [T]) {
        let c = self.c;
        let mut z = vec![T::zero(); 2 * c];
        for k in 0..self.n {
            z[..c].copy_from_slice(cur.point(k));
            z[c..].copy_from_slice(prev.point(k));
            let df = &dfused[k * c..(k + 1) * c];
            match self.strategy {
                FusionStrategy::LinearFusion => {
                    for row in 0..c {
                        let g = df[row];
                        if g == T::zero() {
                            continue;
                        }
                        for i in 0..2 * c {
                            grad[row * 2 * c + i] += g * z[i];
                        }
                        grad[2 * c * c + row] += g;
                    }
                }
                FusionStrategy::WeightedSum => {
                    let [w0, w1] = self.gate(k, &z);
                    let mut dw0 = T::zero();
                    let mut dw1 = T::zero();
                    for ch in 0..c {
                        dw0 += df[ch] * z[ch];
                        dw1 += df[ch] * z[c + ch];
                    }
                    let mean = w0 * dw0 + w1 * dw1;
                    let dg = [w0 * (dw0 - mean), w1 * (dw1 - mean)];
                    for (f, g) in dg.iter().enumerate() {
                        for i in 0..2 * c {
                            grad[f * 2 * c + i] += *g * z[i];
                        }
                        grad[4 * c + 2 * k + f] += *g;
                    }
                }
            }
        }
    }
}

/// Fuses current and previous anchor features; the validity mask is the elementwise OR.
pub fn fuse_temporal<T: Real>(
    current: &AnchorFeature<T>,
    previous: &AnchorFeature<T>,
    params: &FusionParams<T>,
) -> Result<AnchorFeature<T>, HeadError> {
    params.check(current, previous)?;
    let mut out = AnchorFeature::zeros(current.n, current.c);
    params.forward_into(current, previous, &mut out);
    Ok(out)
}

/// Weighted sum with explicit per-point weights `(w_cur, w_prev)`.
pub fn fuse_with_weights<T: Real>(
    current: &AnchorFeature<T>,
    previous: &AnchorFeature<T>,
    weights: &[(T, T)],
) -> Result<AnchorFeature<T>, HeadError> {
    if current.n != previous.n || current.c != previous.c || weights.len() != current.n {
        return Err(HeadError::ShapeMismatch("weights must cover every anchor point".into()));
    }
    let mut out = AnchorFeature::zeros(current.n, current.c);
    for (k, &(w0, w1)) in weights.iter().enumerate() {
        for ch in 0..current.c {
            out.per_point[k * current.c + ch] = w0 * current.point(k)[ch] + w1 * previous.point(k)[ch];
        }
        out.valid_mask[k] = current.valid_mask[k] || previous.valid_mask[k];
    }
    Ok(out)
}
