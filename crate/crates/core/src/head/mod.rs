//! Anchor head: a one-hidden-layer perceptron over concatenated anchor point
//! features with class, offset and visibility outputs, plus its losses,
//! hand-written gradients, optimizer, temporal fusion and iterative inference.

mod checkpoint;
mod fusion;
mod infer;
mod loss;
mod optim;
mod trainer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::AnchorFeature;
use crate::scalar::Real;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, CheckpointHeader};
pub use fusion::{fuse_temporal, fuse_with_weights, FusionParams, FusionStrategy};
pub use infer::{postprocess, predict_iterative, predict_proposals, PrevFrame};
pub use loss::{classification_loss, focal_term, regression_loss, total_loss, LossTargets};
pub use optim::{backward_and_step, gradient_check, gradient_check_with, loss_and_grad, AdamMoments, Batch, GradCheckOptions, Model};
pub use trainer::{train_model, EpochStats, SceneSample, TrainOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("unknown fusion strategy `{0}`")]
    UnknownStrategy(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Lane(#[from] crate::lane::LaneError),
    #[error(transparent)]
    Anchor(#[from] crate::anchor::AnchorError),
}

/// Sizes of the head: `N` points, `C` channels, `L` classes (class 0 is background), hidden width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShape {
    pub n_points: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub hidden: usize,
}

pub const DEFAULT_HIDDEN: usize = 64;

/// Flat parameter offsets.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub w1: usize,
    pub b1: usize,
    pub wc: usize,
    pub bc: usize,
    pub wr: usize,
    pub br: usize,
    pub wv: usize,
    pub bv: usize,
    pub total: usize,
}

impl HeadShape {
    pub fn input_dim(&self) -> usize {
        self.n_points * self.channels
    }

    pub(crate) fn layout(&self) -> Layout {
        let (d, h, l, n) = (self.input_dim(), self.hidden, self.n_classes, self.n_points);
        let w1 = 0;
        let b1 = w1 + h * d;
        let wc = b1 + h;
        let bc = wc + l * h;
        let wr = bc + l;
        let br = wr + 2 * n * h;
        let wv = br + 2 * n;
        let bv = wv + n * h;
        Layout { w1, b1, wc, bc, wr, br, wv, bv, total: bv + n }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    fn validate(&self) -> Result<(), HeadError> {
        if self.n_points == 0 || self.channels == 0 || self.hidden == 0 || self.n_classes < 2 {
            return Err(HeadError::ShapeMismatch(format!("degenerate head shape {self:?}")));
        }
        Ok(())
    }
}

/// Head weights in one flat buffer (see [`Layout`]) plus optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    shape: HeadShape,
    values: Vec<T>,
    pub(crate) moments: AdamMoments<T>,
}

impl<T: Real> HeadParams<T> {
    pub fn zeros(shape: HeadShape) -> Result<Self, HeadError> {
        shape.validate()?;
        let n = shape.param_count();
        Ok(Self { shape, values: vec![T::zero(); n], moments: AdamMoments::new(n) })
    }

    /// He-uniform hidden weights, small output weights, zero biases.
    pub fn init(shape: HeadShape, seed: u64) -> Result<Self, HeadError> {
        let mut p = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lay = shape.layout();
        let d = shape.input_dim() as f64;
        let h = shape.hidden as f64;
        let a1 = (6.0 / d).sqrt();
        for v in &mut p.values[lay.w1..lay.b1] {
            *v = T::lit(rng.gen_range(-a1..a1));
        }
        let a2 = (1.0 / h).sqrt() * 0.1;
        for range in [lay.wc..lay.bc, lay.wr..lay.br, lay.wv..lay.bv] {
            for v in &mut p.values[range] {
                *v = T::lit(rng.gen_range(-a2..a2));
            }
        }
        Ok(p)
    }

    pub fn from_values(shape: HeadShape, values: Vec<T>) -> Result<Self, HeadError> {
        shape.validate()?;
        if values.len() != shape.param_count() {
            return Err(HeadError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                shape.param_count(),
                values.len()
            )));
        }
        let n = values.len();
        Ok(Self { shape, values, moments: AdamMoments::new(n) })
    }

    pub fn shape(&self) -> HeadShape {
        self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Named tensors `(name, rows, cols, data)` in layout order.
    pub fn tensors(&self) -> Vec<(&'static str, usize, usize, &[T])> {
        let s = self.shape;
        let l = s.layout();
        let v = &self.values;
        vec![
            ("w1", s.hidden, s.input_dim(), &v[l.w1..l.b1]),
            ("b1", s.hidden, 1, &v[l.b1..l.wc]),
            ("wc", s.n_classes, s.hidden, &v[l.wc..l.bc]),
            ("bc", s.n_classes, 1, &v[l.bc..l.wr]),
            ("wr", 2 * s.n_points, s.hidden, &v[l.wr..l.br]),
            ("br", 2 * s.n_points, 1, &v[l.br..l.wv]),
            ("wv", s.n_points, s.hidden, &v[l.wv..l.bv]),
            ("bv", s.n_points, 1, &v[l.bv..l.total]),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Head output for one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub class_probs: Vec<T>,
    pub dx: Vec<T>,
    pub dz: Vec<T>,
    pub vis: Vec<T>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache<T> {
    pub hidden_pre: Vec<T>,
    pub hidden: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
    pub offsets: Vec<T>,
    pub vis_logits: Vec<T>,
    pub vis: Vec<T>,
}

impl<T: Real> ForwardCache<T> {
    pub fn new(shape: &HeadShape) -> Self {
        let n = shape.n_points;
        Self {
            hidden_pre: vec![T::zero(); shape.hidden],
            hidden: vec![T::zero(); shape.hidden],
            logits: vec![T::zero(); shape.n_classes],
            probs: vec![T::zero(); shape.n_classes],
            offsets: vec![T::zero(); 2 * n],
            vis_logits: vec![T::zero(); n],
            vis: vec![T::zero(); n],
        }
    }

    pub fn prediction(&self, n: usize) -> Prediction<T> {
        Prediction {
            class_probs: self.probs.clone(),
            dx: self.offsets[..n].to_vec(),
            dz: self.offsets[n..].to_vec(),
            vis: self.vis.clone(),
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_into<T: Real>(logits: &[T], out: &mut [T]) {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn dot<T: Real>(w: &[T], x: &[T]) -> T {
    let mut acc = T::zero();
    for (a, b) in w.iter().zip(x) {
        acc += *a * *b;
    }
    acc
}

/// Forward pass on a flat `N·C` input, filling `cache`.
pub(crate) fn forward_raw<T: Real>(x: &[T], params: &HeadParams<T>, cache: &mut ForwardCache<T>) {
    let s = params.shape;
    let l = s.layout();
    let v = &params.values;
    let d = s.input_dim();
    for h in 0..s.hidden {
        let pre = v[l.b1 + h] + dot(&v[l.w1 + h * d..l.w1 + (h + 1) * d], x);
        cache.hidden_pre[h] = pre;
        cache.hidden[h] = pre.max(T::zero());
    }
    let hid = &cache.hidden;
    let hw = s.hidden;
    for c in 0..s.n_classes {
        cache.logits[c] = v[l.bc + c] + dot(&v[l.wc + c * hw..l.wc + (c + 1) * hw], hid);
    }
    softmax_into(&cache.logits, &mut cache.probs);
    for o in 0..2 * s.n_points {
        cache.offsets[o] = v[l.br + o] + dot(&v[l.wr + o * hw..l.wr + (o + 1) * hw], hid);
    }
    for k in 0..s.n_points {
        let z = v[l.bv + k] + dot(&v[l.wv + k * hw..l.wv + (k + 1) * hw], hid);
        cache.vis_logits[k] = z;
        cache.vis[k] = sigmoid(z);
    }
}

pub fn forward<T: Real>(feat: &AnchorFeature<T>, params: &HeadParams<T>) -> Result<Prediction<T>, HeadError> {
    let s = params.shape;
    if feat.n != s.n_points || feat.c != s.channels || feat.per_point.len() != s.input_dim() {
        return Err(HeadError::ShapeMismatch(format!(
            "feature {}x{} does not fit head {}x{}",
            feat.n, feat.c, s.n_points, s.channels
        )));
    }
    let mut cache = ForwardCache::new(&s);
    forward_raw(&feat.per_point, params, &mut cache);
    Ok(cache.prediction(s.n_points))
}

/// Loss weights, focal constants and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub n_positives: usize,
    /// Later passes: refined anchors closer than this (m) to a lane are positive.
    pub refine_radius: f64,
    pub seed: u64,
    pub epochs: usize,
    pub hidden: usize,
    /// Epoch at which the learning rate drops tenfold.
    pub lr_decay_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_reg: 1.0,
            focal_alpha: 0.5,
            focal_gamma: 2.0,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            n_positives: 3,
            refine_radius: 0.25,
            seed: 0,
            epochs: 20,
            hidden: DEFAULT_HIDDEN,
            lr_decay_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HeadError> {
        let positive = [self.lambda_cls, self.lambda_reg, self.focal_alpha]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite())
            && self.focal_gamma >= 0.0
            && self.learning_rate >= 0.0
            && self.weight_decay >= 0.0
            && self.refine_radius >= 0.0;
        if !positive || self.n_positives == 0 || self.hidden == 0 {
            return Err(HeadError::InvalidConfig("rates and coefficients must be non-negative".into()));
        }
        Ok(())
    }
}
