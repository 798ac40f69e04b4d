//! Analytic feature rendering. Every cell's ray is intersected with the ground
//! surface and the hit point is described relative to the nearest lane.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{line_of_sight, EgoFrame, SceneSpec, SynthError};
use crate::geometry::{CameraRig, GroundPoint, ImageDims};
use crate::sampling::FeatureMap;
use crate::scalar::Real;

/// Lane channels of a cell whose ray never meets the ground:
/// signed distance, presence, heading sin, heading cos, height.
pub const SKY_SENTINEL: [f64; 5] = [0.0, 0.0, 0.0, -1.0, 0.0];

const LANE_CHANNELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelSpec {
    /// Append the column offset (feature cells) from the nearest lane's image in the same row.
    pub image_offset: bool,
    /// Append normalized column and row channels in [-1, 1].
    pub positional: bool,
    /// Zero the lane channels where the nearest lane is inside an occlusion span.
    pub occlude_features: bool,
    pub presence_radius: f64,
    pub distance_clamp: f64,
    pub offset_clamp: f64,
    /// Horizontal distance beyond which a ray counts as missing the ground.
    pub max_range: f64,
    /// Gaussian noise added to the lane channels of ground cells.
    pub noise_std: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            image_offset: false,
            positional: true,
            occlude_features: false,
            presence_radius: 0.25,
            distance_clamp: 5.0,
            offset_clamp: 8.0,
            max_range: 200.0,
            noise_std: 0.0,
        }
    }
}

impl ChannelSpec {
    pub fn count(&self) -> usize {
        LANE_CHANNELS + usize::from(self.image_offset) + if self.positional { 2 } else { 0 }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = self.presence_radius >= 0.0
            && self.distance_clamp > 0.0
            && self.offset_clamp > 0.0
            && self.max_range > 0.0
            && self.noise_std >= 0.0
            && self.noise_std.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec("channel parameters must be non-negative and finite".into()))
        }
    }
}

/// Renders the frame with the ego at the road origin, on a grid of size `dims`.
pub fn render_feature_map<T: Real>(
    spec: &SceneSpec,
    dims: ImageDims,
    channels: &ChannelSpec,
    seed: u64,
) -> Result<FeatureMap<T>, SynthError> {
    spec.validate()?;
    channels.validate()?;
    let spec = SceneSpec {
        camera: super::CameraSpec { image: (dims.h, dims.w), feature: (dims.h_f, dims.w_f), ..spec.camera },
        channels: channels.clone(),
        ..spec.clone()
    };
    let rig = spec.rig::<T>();
    Ok(render_frame(&spec, &EgoFrame::on_road(&spec, 0.0), &rig, seed))
}

fn to_f64_rig<T: Real>(rig: &CameraRig<T>) -> CameraRig<f64> {
    let cv = |m: &[[T; 3]; 3]| m.map(|r| r.map(|v| v.to_f64_lossy()));
    let k = crate::geometry::CameraIntrinsics::new(cv(rig.intrinsics.matrix())).expect("valid intrinsics");
    let ex = crate::geometry::RigidTransform::new(
        cv(rig.extrinsics.rotation()),
        rig.extrinsics.translation_vec().map(|v| v.to_f64_lossy()),
    )
    .expect("valid extrinsics");
    CameraRig { intrinsics: k, extrinsics: ex, dims: rig.dims }
}

/// First intersection of the ray `c + t·d` with the local ground surface.
pub(crate) fn intersect_ground(spec: &SceneSpec, ego: &EgoFrame, c: [f64; 3], d: [f64; 3]) -> Option<[f64; 3]> {
    let horiz = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let t_max = if horiz > 1e-12 { spec.channels.max_range / horiz } else { spec.channels.max_range };
    let at = |t: f64| [c[0] + t * d[0], c[1] + t * d[1], c[2] + t * d[2]];
    if spec.ground.is_flat() {
        if d[2] >= 0.0 {
            return None;
        }
        let t = -c[2] / d[2];
        return (t <= t_max).then(|| {
            let mut p = at(t);
            p[2] = 0.0;
            p
        });
    }
    let above = |t: f64| {
        let p = at(t);
        p[2] - ego.ground_local(spec, p[0], p[1])
    };
    let mut t = 0.0;
    while t < t_max {
        let next = (t + 0.2 + 0.01 * t).min(t_max);
        if above(next) <= 0.0 {
            let (mut lo, mut hi) = (t, next);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if above(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let mut p = at(hi);
            p[2] = ego.ground_local(spec, p[0], p[1]);
            return Some(p);
        }
        t = next;
    }
    None
}

/// Feature-grid image of every lane, densely sampled along `y`; hidden samples are `None`.
fn lane_images(spec: &SceneSpec, ego: &EgoFrame, rig: &CameraRig<f64>) -> Vec<Vec<Option<(f64, f64)>>> {
    let y_end = spec.y_samples.iter().copied().fold(0.0, f64::max) + 10.0;
    let steps = (y_end / 0.5) as usize;
    spec.offsets()
        .iter()
        .enumerate()
        .map(|(i, &o)| {
            (1..=steps)
                .map(|s| {
                    let y = s as f64 * 0.5;
                    let p = ego.lane_point(spec, o, y);
                    let hidden = spec.channels.occlude_features && spec.occluded(i, y);
                    match rig.project(&GroundPoint::new(p[0], p[1], p[2])) {
                        Ok(fp) if !hidden && line_of_sight(spec, ego, p) => Some((fp.u, fp.v)),
                        _ => None,
                    }
                })
                .collect()
        })
        .collect()
}

/// Cells within one cell (Chebyshev, feature units) of a visible lane's image.
fn presence_stamps(images: &[Vec<Option<(f64, f64)>>], h_f: usize, w_f: usize) -> Vec<bool> {
    let mut mask = vec![false; h_f * w_f];
    let mut mark = |u: f64, v: f64| {
        let (c0, c1) = ((u - 1.0).ceil().max(0.0), (u + 1.0).floor().min(w_f as f64 - 1.0));
        let (r0, r1) = ((v - 1.0).ceil().max(0.0), (v + 1.0).floor().min(h_f as f64 - 1.0));
        if c0 > c1 || r0 > r1 {
            return;
        }
        for r in r0 as usize..=r1 as usize {
            for c in c0 as usize..=c1 as usize {
                mask[r * w_f + c] = true;
            }
        }
    };
    for img in images {
        let mut prev = None;
        for &cur in img {
            if let (Some(a), Some(b)) = (prev, cur) {
                let (a, b): ((f64, f64), (f64, f64)) = (a, b);
                let len = (b.0 - a.0).abs().max((b.1 - a.1).abs());
                let steps = (len / 0.25).ceil().max(1.0) as usize;
                for s in 0..=steps {
                    let f = s as f64 / steps as f64;
                    mark(a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
                }
            } else if let Some(b) = cur {
                mark(b.0, b.1);
            }
            prev = cur;
        }
    }
    mask
}

/// Columns where the lane images cross each feature row.
fn row_crossings(images: &[Vec<Option<(f64, f64)>>], h_f: usize) -> Vec<Vec<f64>> {
    let mut rows = vec![Vec::new(); h_f];
    for img in images {
        for w in img.windows(2) {
            let (Some(a), Some(b)) = (w[0], w[1]) else { continue };
            let (lo, hi) = (a.1.min(b.1), a.1.max(b.1));
            let first = lo.ceil().max(0.0) as usize;
            for r in first..h_f {
                let v = r as f64;
                if v > hi {
                    break;
                }
                let f = if hi > lo { (v - a.1) / (b.1 - a.1) } else { 0.0 };
                rows[r].push(a.0 + f * (b.0 - a.0));
            }
        }
    }
    rows
}

pub(crate) fn render_frame<T: Real>(spec: &SceneSpec, ego: &EgoFrame, rig: &CameraRig<T>, seed: u64) -> FeatureMap<T> {
    let rig = to_f64_rig(rig);
    let ch = &spec.channels;
    let (h_f, w_f) = (rig.dims.h_f, rig.dims.w_f);
    let n_ch = ch.count();
    let offsets = spec.offsets();
    let images = lane_images(spec, ego, &rig);
    let stamps = presence_stamps(&images, h_f, w_f);
    let crossings = row_crossings(&images, h_f);
    let noise = (ch.noise_std > 0.0).then(|| Normal::new(0.0, ch.noise_std).expect("finite std"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(h_f * w_f * n_ch);
    for r in 0..h_f {
        for c in 0..w_f {
            let (cam, dir) = rig.feature_ray(c as f64, r as f64);
            let hit = intersect_ground(spec, ego, [cam.x, cam.y, cam.z], dir);
            let mut lane = SKY_SENTINEL;
            let mut offset = 0.0;
            if let Some(p) = hit {
                let w = ego.to_world(p);
                let phi_ego = ego.psi;
                let (mut best, mut best_i) = (f64::INFINITY, 0);
                let mut best_phi = 0.0;
                for (i, &o) in offsets.iter().enumerate() {
                    let phi = (2.0 * spec.curvature * w[1]).atan();
                    let d = (w[0] - (o + spec.curvature * w[1] * w[1])) * phi.cos();
                    if d.abs() < best.abs() {
                        (best, best_i, best_phi) = (d, i, phi);
                    }
                }
                let theta = best_phi - phi_ego;
                let present = best.abs() <= ch.presence_radius || stamps[r * w_f + c];
                lane = [
                    best.clamp(-ch.distance_clamp, ch.distance_clamp),
                    if present { 1.0 } else { 0.0 },
                    theta.sin(),
                    theta.cos(),
                    p[2],
                ];
                let du = crossings[r].iter().map(|&u| c as f64 - u).min_by(|a, b| a.abs().total_cmp(&b.abs()));
                let side = if best < 0.0 { -1.0 } else { 1.0 };
                offset = du.unwrap_or(side * ch.offset_clamp).clamp(-ch.offset_clamp, ch.offset_clamp);
                if ch.occlude_features && spec.occluded(best_i, p[1]) && best.abs() <= spec.lane_spacing / 2.0 {
                    lane = [0.0; LANE_CHANNELS];
                    offset = 0.0;
                }
                if let Some(n) = &noise {
                    for v in lane.iter_mut() {
                        *v += n.sample(&mut rng);
                    }
                    offset += n.sample(&mut rng);
                }
            }
            data.extend(lane.iter().map(|&v| T::lit(v)));
            if ch.image_offset {
                data.push(T::lit(offset));
            }
            if ch.positional {
                data.push(T::lit(2.0 * c as f64 / (w_f.max(2) - 1) as f64 - 1.0));
                data.push(T::lit(2.0 * r as f64 / (h_f.max(2) - 1) as f64 - 1.0));
            }
        }
    }
    FeatureMap::new(h_f, w_f, n_ch, data).expect("rendered values are finite")
}
