use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anchor::Anchor;
use crate::lane::Lane3D;
use crate::sampling::AnchorFeature;
use crate::scalar::Real;

use super::fusion::FusionParams;
use super::loss::{cls_term_grad, reg_term_grad, LossTargets};
use super::{forward_raw, ForwardCache, HeadError, HeadParams, TrainConfig};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates of the adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> AdamMoments<T> {
    pub fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    /// One update with decoupled weight decay:
    /// `θ ← θ − lr·(m̂/(√v̂+ε) + wd·θ)`.
    pub fn step(&mut self, values: &mut [T], grad: &[T], lr: T, weight_decay: T) {
        self.t += 1;
        let (b1, b2, eps) = (T::lit(BETA1), T::lit(BETA2), T::lit(ADAM_EPS));
        let t = self.t as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for i in 0..values.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            values[i] -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * values[i]);
        }
    }
}

/// Head plus optional temporal fusion, trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub head: HeadParams<T>,
    pub fusion: Option<FusionParams<T>>,
}

impl<T: Real> Model<T> {
    pub fn new(head: HeadParams<T>) -> Self {
        Self { head, fusion: None }
    }

    pub fn with_fusion(head: HeadParams<T>, fusion: FusionParams<T>) -> Self {
        Self { head, fusion: Some(fusion) }
    }

    /// Number of trainable scalars: head first, then fusion.
    pub fn param_count(&self) -> usize {
        self.head.values().len() + self.fusion.as_ref().map_or(0, |f| f.values().len())
    }

    fn param_mut(&mut self, i: usize) -> &mut T {
        let nh = self.head.values().len();
        if i < nh {
            &mut self.head.values_mut()[i]
        } else {
            &mut self.fusion.as_mut().expect("index within model").values_mut()[i - nh]
        }
    }
}

/// One scene worth of training data.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T: Real> {
    pub features: &'a [AnchorFeature<T>],
    /// Transported previous-frame features, required when the model fuses.
    pub prev_features: Option<&'a [AnchorFeature<T>]>,
    pub anchors: &'a [Anchor<T>],
    pub gts: &'a [Lane3D<T>],
    pub targets: &'a LossTargets,
}

impl<T: Real> Batch<'_, T> {
    fn validate(&self, model: &Model<T>) -> Result<(), HeadError> {
        let m = self.features.len();
        if self.anchors.len() != m || self.targets.class_targets.len() != m {
            return Err(HeadError::ShapeMismatch(format!(
                "{} features, {} anchors, {} targets",
                m,
                self.anchors.len(),
                self.targets.class_targets.len()
            )));
        }
        let s = model.head.shape();
        if let Some(f) = self.features.iter().find(|f| f.n != s.n_points || f.c != s.channels) {
            return Err(HeadError::ShapeMismatch(format!("feature {}x{} for head {}x{}", f.n, f.c, s.n_points, s.channels)));
        }
        if self.targets.class_targets.iter().any(|&t| t >= s.n_classes) {
            return Err(HeadError::ShapeMismatch("class target outside head classes".into()));
        }
        if self.targets.pairs.iter().any(|&(g, a)| g >= self.gts.len() || a >= m) {
            return Err(HeadError::ShapeMismatch("positive pair out of range".into()));
        }
        match (&model.fusion, self.prev_features) {
            (Some(_), None) => Err(HeadError::ShapeMismatch("fusion model needs previous-frame features".into())),
            (Some(_), Some(p)) if p.len() != m => Err(HeadError::ShapeMismatch("previous features count".into())),
            _ => Ok(()),
        }
    }
}

/// Loss value and gradients `(head, fusion)`.
pub fn loss_and_grad<T: Real>(
    model: &Model<T>,
    batch: &Batch<'_, T>,
    cfg: &TrainConfig,
) -> Result<(T, Vec<T>, Vec<T>), HeadError> {
    batch.validate(model)?;
    let head = &model.head;
    let s = head.shape();
    let lay = s.layout();
    let w = head.values();
    let (n, d, hw) = (s.n_points, s.input_dim(), s.hidden);
    let m = batch.features.len();
    let mut ghead = vec![T::zero(); w.len()];
    let mut gfusion = vec![T::zero(); model.fusion.as_ref().map_or(0, |f| f.values().len())];
    if m == 0 {
        return Ok((T::zero(), ghead, gfusion));
    }

    let mut pairs_of: Vec<Vec<usize>> = vec![Vec::new(); m];
    for &(g, a) in &batch.targets.pairs {
        pairs_of[a].push(g);
    }
    let cls_scale = T::lit(cfg.lambda_cls) / T::lit(m as f64);
    let n_pairs = batch.targets.pairs.len();
    let reg_scale = if n_pairs == 0 { T::zero() } else { T::lit(cfg.lambda_reg) / T::lit(n_pairs as f64) };
    let (alpha, gamma) = (T::lit(cfg.focal_alpha), T::lit(cfg.focal_gamma));

    let mut cache = ForwardCache::new(&s);
    let mut fused = AnchorFeature::zeros(n, s.channels);
    let mut dlogits = vec![T::zero(); s.n_classes];
    let mut doff = vec![T::zero(); 2 * n];
    let mut dvl = vec![T::zero(); n];
    let mut dh = vec![T::zero(); hw];
    let mut dinput = vec![T::zero(); d];
    let mut cls_sum = T::zero();
    let mut reg_sum = T::zero();

    for j in 0..m {
        let x: &[T] = match (&model.fusion, batch.prev_features) {
            (Some(fp), Some(prev)) => {
                fp.forward_into(&batch.features[j], &prev[j], &mut fused);
                &fused.per_point
            }
            _ => &batch.features[j].per_point,
        };
        forward_raw(x, head, &mut cache);

        dlogits.iter_mut().for_each(|v| *v = T::zero());
        cls_sum += cls_term_grad(&cache.probs, batch.targets.class_targets[j], alpha, gamma, cls_scale, Some(&mut dlogits));

        let positive = !pairs_of[j].is_empty();
        if positive {
            doff.iter_mut().for_each(|v| *v = T::zero());
            dvl.iter_mut().for_each(|v| *v = T::zero());
            for &g in &pairs_of[j] {
                reg_sum += reg_term_grad(
                    &cache.offsets[..n],
                    &cache.offsets[n..],
                    &cache.vis,
                    &batch.anchors[j],
                    &batch.gts[g],
                    reg_scale,
                    Some((&mut doff, &mut dvl)),
                );
            }
        }

        // Output layers.
        dh.iter_mut().for_each(|v| *v = T::zero());
        let hid = &cache.hidden;
        let mut accumulate = |wbase: usize, bbase: usize, rows: usize, dout: &[T], dh: &mut [T]| {
            for r in 0..rows {
                let g = dout[r];
                if g == T::zero() {
                    continue;
                }
                ghead[bbase + r] += g;
                let row = wbase + r * hw;
                for h in 0..hw {
                    ghead[row + h] += g * hid[h];
                    dh[h] += g * w[row + h];
                }
            }
        };
        accumulate(lay.wc, lay.bc, s.n_classes, &dlogits, &mut dh);
        if positive {
            accumulate(lay.wr, lay.br, 2 * n, &doff, &mut dh);
            accumulate(lay.wv, lay.bv, n, &dvl, &mut dh);
        }

        // Hidden layer.
        let want_input = model.fusion.is_some();
        if want_input {
            dinput.iter_mut().for_each(|v| *v = T::zero());
        }
        for h in 0..hw {
            let pre = cache.hidden_pre[h];
            if pre < T::zero() || dh[h] == T::zero() {
                continue;
            }
            // At exactly zero use the mean of the one-sided slopes.
            let g = if pre == T::zero() { dh[h] * T::lit(0.5) } else { dh[h] };
            ghead[lay.b1 + h] += g;
            let row = lay.w1 + h * d;
            for i in 0..d {
                ghead[row + i] += g * x[i];
            }
            if want_input {
                for i in 0..d {
                    dinput[i] += g * w[row + i];
                }
            }
        }
        if let (Some(fp), Some(prev)) = (&model.fusion, batch.prev_features) {
            fp.backward(&batch.features[j], &prev[j], &dinput, &mut gfusion);
        }
    }

    let mut loss = T::lit(cfg.lambda_cls) * cls_sum / T::lit(m as f64);
    if n_pairs > 0 {
        loss += T::lit(cfg.lambda_reg) * reg_sum / T::lit(n_pairs as f64);
    }
    Ok((loss, ghead, gfusion))
}

pub(crate) fn step_with_lr<T: Real>(
    model: &mut Model<T>,
    batch: &Batch<'_, T>,
    cfg: &TrainConfig,
    lr: T,
) -> Result<T, HeadError> {
    if !model.head.is_finite() {
        return Err(HeadError::NonFiniteGradient);
    }
    let (loss, gh, gf) = loss_and_grad(model, batch, cfg)?;
    if !loss.is_finite() || gh.iter().chain(&gf).any(|g| !g.is_finite()) {
        return Err(HeadError::NonFiniteGradient);
    }
    let wd = T::lit(cfg.weight_decay);
    let head = &mut model.head;
    let mut moments = std::mem::replace(&mut head.moments, AdamMoments::new(0));
    moments.step(head.values_mut(), &gh, lr, wd);
    head.moments = moments;
    if let Some(fp) = model.fusion.as_mut() {
        let mut moments = std::mem::replace(&mut fp.moments, AdamMoments::new(0));
        moments.step(fp.values_mut(), &gf, lr, wd);
        fp.moments = moments;
    }
    Ok(loss)
}

/// Computes the loss, its gradients and applies one optimizer step.
/// Returns the loss before the step.
pub fn backward_and_step<T: Real>(model: &mut Model<T>, batch: &Batch<'_, T>, cfg: &TrainConfig) -> Result<T, HeadError> {
    step_with_lr(model, batch, cfg, T::lit(cfg.learning_rate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions<T> {
    /// Random parameters checked when `indices` is `None`.
    pub n_params: usize,
    pub seed: u64,
    pub step: T,
    pub indices: Option<Vec<usize>>,
    /// Multiplies the analytic gradient at one index before comparing.
    pub scale_grad: Option<(usize, T)>,
}

impl<T: Real> Default for GradCheckOptions<T> {
    fn default() -> Self {
        Self { n_params: 200, seed: 0, step: T::lit(1e-5), indices: None, scale_grad: None }
    }
}

/// Maximum relative error between analytic and central-difference gradients
/// over 200 random parameters.
///
/// Each parameter is differenced at `step` and `step / 10` and the closer
/// agreement counts, so an activation kink inside `±step` is not reported
/// while a wrong gradient fails at both. The denominator is floored at the
/// rounding noise of the difference quotient, `1e4 · ε · max(1, |L|) / step`.
pub fn gradient_check<T: Real>(model: &Model<T>, batch: &Batch<'_, T>, cfg: &TrainConfig) -> Result<T, HeadError> {
    gradient_check_with(model, batch, cfg, &GradCheckOptions::default())
}

pub fn gradient_check_with<T: Real>(
    model: &Model<T>,
    batch: &Batch<'_, T>,
    cfg: &TrainConfig,
    opts: &GradCheckOptions<T>,
) -> Result<T, HeadError> {
    let (loss, gh, gf) = loss_and_grad(model, batch, cfg)?;
    let mut analytic: Vec<T> = gh.into_iter().chain(gf).collect();
    if let Some((i, f)) = opts.scale_grad {
        analytic[i] *= f;
    }
    let total = model.param_count();
    let indices = match &opts.indices {
        Some(ix) => ix.clone(),
        None if total <= opts.n_params => (0..total).collect(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut ix = sample(&mut rng, total, opts.n_params).into_vec();
            ix.sort_unstable();
            ix
        }
    };
    let mut probe = model.clone();
    let mut worst = T::zero();
    let two = T::lit(2.0);
    let scale = T::one().max(loss.abs());
    for i in indices {
        let a = analytic[i];
        let mut best = T::infinity();
        for h in [opts.step, opts.step / T::lit(10.0)] {
            let orig = *probe.param_mut(i);
            *probe.param_mut(i) = orig + h;
            let plus = loss_and_grad(&probe, batch, cfg)?.0;
            *probe.param_mut(i) = orig - h;
            let minus = loss_and_grad(&probe, batch, cfg)?.0;
            *probe.param_mut(i) = orig;
            let numeric = (plus - minus) / (two * h);
            let floor = T::lit(1e4) * T::epsilon() * scale / h;
            best = best.min((a - numeric).abs() / floor.max(a.abs() + numeric.abs()));
        }
        worst = worst.max(best);
    }
    Ok(worst)
}
