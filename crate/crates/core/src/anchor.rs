//! 3D lane anchors: straight rays from `(x_s, 0, z_s)` sampled at fixed
//! forward distances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GroundPoint;
use crate::lane::Proposal;
use crate::scalar::Real;

/// Forward sampling distances of the 10-point synthetic-highway layout.
pub const APOLLO_Y_SAMPLES: [f64; 10] = [5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 65.0, 80.0, 100.0];
pub const OPENLANE_Y_SAMPLES: [f64; 20] = [
    5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 80.0, 85.0,
    90.0, 95.0, 100.0,
];
pub const ONCE_Y_SAMPLES: [f64; 10] = [2.0, 5.0, 8.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0];

pub const DEFAULT_YAWS_DEG: [f64; 17] =
    [0.0, 1.0, -1.0, 3.0, -3.0, 5.0, -5.0, 7.0, -7.0, 10.0, -10.0, 15.0, -15.0, 20.0, -20.0, 30.0, -30.0];
pub const DEFAULT_PITCHES_DEG: [f64; 7] = [0.0, 1.0, -1.0, 2.0, -2.0, 5.0, -5.0];
pub const DEFAULT_X_INTERVAL: f64 = 1.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnchorError {
    #[error("y samples must be strictly increasing, positive and at least two")]
    InvalidYSampling,
    #[error("anchor angles must lie strictly inside (-90, 90) degrees")]
    InvalidAngle,
    #[error("anchor grid has an empty factor: {0}")]
    EmptyGrid(&'static str),
    #[error("invalid anchor grid config: {0}")]
    InvalidConfig(&'static str),
    #[error("expected {expected} points, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Shared forward sampling distances `y^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>")]
#[serde(bound = "T: Real")]
pub struct YSampling<T: Real> {
    ys: Vec<T>,
}

impl<T: Real> YSampling<T> {
    pub fn new(ys: Vec<T>) -> Result<Self, AnchorError> {
        let ok = ys.len() >= 2
            && ys[0] > T::zero()
            && ys.windows(2).all(|w| w[1] > w[0])
            && ys.iter().all(|y| y.is_finite());
        if ok {
            Ok(Self { ys })
        } else {
            Err(AnchorError::InvalidYSampling)
        }
    }

    pub fn apollo() -> Self {
        Self { ys: APOLLO_Y_SAMPLES.iter().map(|&y| T::lit(y)).collect() }
    }

    pub fn values(&self) -> &[T] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }
}

impl<T: Real> TryFrom<Vec<T>> for YSampling<T> {
    type Error = AnchorError;
    fn try_from(v: Vec<T>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl<T: Real> From<YSampling<T>> for Vec<T> {
    fn from(s: YSampling<T>) -> Self {
        s.ys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AnchorParams<T: Real> {
    pub x_s: T,
    pub pitch_deg: T,
    pub yaw_deg: T,
    #[serde(default)]
    pub z_s: T,
}

impl<T: Real> AnchorParams<T> {
    pub fn new(x_s: T, pitch_deg: T, yaw_deg: T, z_s: T) -> Result<Self, AnchorError> {
        let limit = T::lit(90.0);
        if !(pitch_deg.abs() < limit && yaw_deg.abs() < limit) {
            return Err(AnchorError::InvalidAngle);
        }
        Ok(Self { x_s, pitch_deg, yaw_deg, z_s })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor<T: Real> {
    pub params: AnchorParams<T>,
    pub points: Vec<GroundPoint<T>>,
}

impl<T: Real> Anchor<T> {
    pub fn xs(&self) -> impl Iterator<Item = T> + '_ {
        self.points.iter().map(|p| p.x)
    }

    pub fn zs(&self) -> impl Iterator<Item = T> + '_ {
        self.points.iter().map(|p| p.z)
    }
}

/// Samples the ray at every `y^k`: `x = x_s + y·tan(yaw)`, `z = z_s + y·tan(pitch)`.
pub fn build_anchor<T: Real>(params: AnchorParams<T>, ys: &YSampling<T>) -> Anchor<T> {
    let tx = params.yaw_deg.to_radians().tan();
    let tz = params.pitch_deg.to_radians().tan();
    let points = ys
        .values()
        .iter()
        .map(|&y| GroundPoint::new(params.x_s + y * tx, y, params.z_s + y * tz))
        .collect();
    Anchor { params, points }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", default)]
pub struct AnchorGridConfig<T: Real> {
    pub x_interval: T,
    pub x_range: (T, T),
    #[serde(rename = "yaws_deg")]
    pub yaws: Vec<T>,
    #[serde(rename = "pitches_deg")]
    pub pitches: Vec<T>,
    #[serde(default)]
    pub z_s: T,
    #[serde(default = "default_y_samples", rename = "y_samples")]
    pub y_samples: Vec<T>,
}

fn default_y_samples<T: Real>() -> Vec<T> {
    APOLLO_Y_SAMPLES.iter().map(|&y| T::lit(y)).collect()
}

impl<T: Real> Default for AnchorGridConfig<T> {
    fn default() -> Self {
        Self {
            x_interval: T::lit(DEFAULT_X_INTERVAL),
            x_range: (T::lit(-10.0), T::lit(10.0)),
            yaws: DEFAULT_YAWS_DEG.iter().map(|&v| T::lit(v)).collect(),
            pitches: DEFAULT_PITCHES_DEG.iter().map(|&v| T::lit(v)).collect(),
            z_s: T::zero(),
            y_samples: default_y_samples(),
        }
    }
}

impl<T: Real> AnchorGridConfig<T> {
    pub fn y_sampling(&self) -> Result<YSampling<T>, AnchorError> {
        YSampling::new(self.y_samples.clone())
    }

    /// Start positions `x_range.0, x_range.0 + interval, …` up to `x_range.1`.
    pub fn start_positions(&self) -> Result<Vec<T>, AnchorError> {
        if !(self.x_interval > T::zero()) {
            return Err(AnchorError::InvalidConfig("x_interval must be positive"));
        }
        if !(self.x_range.0 < self.x_range.1) {
            return Err(AnchorError::InvalidConfig("x_range must be increasing"));
        }
        let span = (self.x_range.1 - self.x_range.0) / self.x_interval;
        // Tolerate round-off so that e.g. (-1.3, 1.3) / 1.3 includes the end point.
        let n = (span + T::lit(1e-9)).floor().to_usize().unwrap_or(0) + 1;
        Ok((0..n).map(|i| self.x_range.0 + T::lit(i as f64) * self.x_interval).collect())
    }
}

/// One anchor per `(x_s, yaw, pitch)`, ordered with `x_s` outermost and pitch innermost.
pub fn build_anchor_grid<T: Real>(
    cfg: &AnchorGridConfig<T>,
    ys: &YSampling<T>,
) -> Result<Vec<Anchor<T>>, AnchorError> {
    if cfg.yaws.is_empty() {
        return Err(AnchorError::EmptyGrid("yaws"));
    }
    if cfg.pitches.is_empty() {
        return Err(AnchorError::EmptyGrid("pitches"));
    }
    let xs = cfg.start_positions()?;
    let mut out = Vec::with_capacity(xs.len() * cfg.yaws.len() * cfg.pitches.len());
    for &x_s in &xs {
        for &yaw in &cfg.yaws {
            for &pitch in &cfg.pitches {
                let params = AnchorParams::new(x_s, pitch, yaw, cfg.z_s)?;
                out.push(build_anchor(params, ys));
            }
        }
    }
    Ok(out)
}

/// Turns a refined proposal into an anchor for the next regression pass.
pub fn proposal_to_anchor<T: Real>(p: &Proposal<T>, ys: &YSampling<T>) -> Result<Anchor<T>, AnchorError> {
    let lane = &p.lane;
    if lane.xs.len() != ys.len() || lane.zs.len() != ys.len() {
        return Err(AnchorError::LengthMismatch { expected: ys.len(), got: lane.xs.len() });
    }
    let points = ys
        .values()
        .iter()
        .zip(lane.xs.iter().zip(&lane.zs))
        .map(|(&y, (&x, &z))| GroundPoint::new(x, y, z))
        .collect::<Vec<_>>();
    let params = AnchorParams { x_s: points[0].x, pitch_deg: T::zero(), yaw_deg: T::zero(), z_s: points[0].z };
    Ok(Anchor { params, points })
}
