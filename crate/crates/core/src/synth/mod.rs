//! Synthetic scenes: lanes laid out on a parametric ground surface, a forward
//! camera, analytically rendered feature maps and ego-motion sequences.
//!
//! Road geometry lives in a fixed world frame. Each frame's ground coordinate
//! system sits on the ground below the camera with `y` along the ego heading.

mod dataset;
mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{YSampling, APOLLO_Y_SAMPLES};
use crate::geometry::{compose, CameraIntrinsics, CameraRig, GroundPoint, ImageDims, RigidTransform};
use crate::lane::Lane3D;
use crate::sampling::FeatureMap;
use crate::scalar::Real;

pub use dataset::{
    read_dataset, read_manifest, read_scene, write_manifest, write_scene, DatasetError, Manifest, ManifestEntry,
    DATASET_SCHEMA,
};
pub use render::{render_feature_map, ChannelSpec, SKY_SENTINEL};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ground {
    Flat,
    Uphill { grade: f64 },
    Downhill { grade: f64 },
    Hill { amplitude: f64, wavelength: f64 },
}

impl Ground {
    /// Height `g(y)` at world longitudinal coordinate `y`; `g(0) = 0`.
    pub fn height(&self, y: f64) -> f64 {
        match *self {
            Ground::Flat => 0.0,
            Ground::Uphill { grade } => grade * y,
            Ground::Downhill { grade } => -grade * y,
            Ground::Hill { amplitude, wavelength } => amplitude * (std::f64::consts::TAU * y / wavelength).sin(),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Ground::Flat)
    }
}

/// Pinhole camera with square pixels and the principal point at the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSpec {
    pub focal: f64,
    pub image: (usize, usize),
    pub feature: (usize, usize),
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self { focal: 500.0, image: (360, 480), feature: (45, 60) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub num_lanes: usize,
    pub lane_spacing: f64,
    pub curvature: f64,
    pub ground: Ground,
    pub camera_height: f64,
    /// Downward tilt in degrees.
    pub camera_pitch: f64,
    /// One category per lane; empty means every lane is category 1.
    pub categories: Vec<usize>,
    /// Per-lane `[y0, y1]` intervals (frame-local `y`) where the lane is hidden.
    pub occlusion_spans: Vec<Vec<(f64, f64)>>,
    /// Lateral position of the ego relative to the center of the lane group.
    pub lateral_shift: f64,
    pub camera: CameraSpec,
    pub y_samples: Vec<f64>,
    pub channels: ChannelSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            num_lanes: 2,
            lane_spacing: 3.5,
            curvature: 0.0,
            ground: Ground::Flat,
            camera_height: 1.5,
            camera_pitch: 3.0,
            categories: Vec::new(),
            occlusion_spans: Vec::new(),
            lateral_shift: 0.0,
            camera: CameraSpec::default(),
            y_samples: APOLLO_Y_SAMPLES.to_vec(),
            channels: ChannelSpec::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
        if self.num_lanes == 0 {
            return bad("num_lanes must be at least 1");
        }
        if !(self.lane_spacing > 0.0) {
            return bad("lane_spacing must be positive");
        }
        if !(self.camera_height > 0.0) {
            return bad("camera_height must be positive");
        }
        if !(self.camera_pitch.abs() < 45.0) || !self.curvature.is_finite() || !self.lateral_shift.is_finite() {
            return bad("camera_pitch, curvature and lateral_shift must be finite and moderate");
        }
        if !self.categories.is_empty() && self.categories.len() != self.num_lanes {
            return bad("categories must list one entry per lane");
        }
        if self.occlusion_spans.len() > self.num_lanes {
            return bad("more occlusion span lists than lanes");
        }
        match self.ground {
            Ground::Hill { wavelength, amplitude } if !(wavelength > 0.0) || !amplitude.is_finite() => {
                return bad("hill needs a positive wavelength")
            }
            Ground::Uphill { grade } | Ground::Downhill { grade } if !(grade.abs() < 1.0) => {
                return bad("grade must be below 100%")
            }
            _ => {}
        }
        let c = &self.camera;
        if !(c.focal > 0.0) || ImageDims::new(c.image.0, c.image.1, c.feature.0, c.feature.1).is_err() {
            return bad("camera focal length and dimensions must be positive");
        }
        YSampling::new(self.y_samples.clone()).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        self.channels.validate()
    }

    pub fn offsets(&self) -> Vec<f64> {
        let mid = (self.num_lanes as f64 - 1.0) / 2.0;
        (0..self.num_lanes).map(|i| (i as f64 - mid) * self.lane_spacing - self.lateral_shift).collect()
    }

    pub fn category(&self, lane: usize) -> usize {
        self.categories.get(lane).copied().unwrap_or(1)
    }

    pub fn rig<T: Real>(&self) -> CameraRig<T> {
        let c = &self.camera;
        let (h, w) = c.image;
        let k = CameraIntrinsics::from_focal(T::lit(c.focal), T::lit(c.focal), T::lit(w as f64 / 2.0), T::lit(h as f64 / 2.0))
            .expect("validated focal length");
        let dims = ImageDims::new(h, w, c.feature.0, c.feature.1).expect("validated dims");
        CameraRig::forward_camera(k, dims, T::lit(self.camera_height), T::lit(self.camera_pitch))
    }

    fn occluded(&self, lane: usize, y: f64) -> bool {
        self.occlusion_spans.get(lane).is_some_and(|spans| spans.iter().any(|&(a, b)| y >= a && y <= b))
    }
}

/// Random scene families used to build datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneProfile {
    /// Flat ground, straight or curved lanes.
    FlatCurved,
    /// Constant grade up to 8%, either direction.
    UpDown,
    Hill,
}

impl std::str::FromStr for SceneProfile {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat_curved" | "flat" => Ok(Self::FlatCurved),
            "up_down" | "updown" => Ok(Self::UpDown),
            "hill" => Ok(Self::Hill),
            _ => Err(SynthError::InvalidSpec(format!("unknown scene profile '{s}'"))),
        }
    }
}

/// Draws a scene layout from `profile`. With `occlusion`, about half of the
/// lanes get one hidden span and the rendered features are zeroed there.
pub fn random_spec<R: Rng>(profile: SceneProfile, occlusion: bool, rng: &mut R) -> SceneSpec {
    let num_lanes = rng.gen_range(2..=4);
    let lane_spacing = rng.gen_range(3.2..3.8);
    let curvature = if profile == SceneProfile::FlatCurved && rng.gen_bool(0.4) {
        0.0
    } else {
        rng.gen_range(-8e-4..8e-4)
    };
    let ground = match profile {
        SceneProfile::FlatCurved => Ground::Flat,
        SceneProfile::UpDown => {
            let grade = rng.gen_range(0.02..0.08);
            if rng.gen_bool(0.5) {
                Ground::Uphill { grade }
            } else {
                Ground::Downhill { grade }
            }
        }
        SceneProfile::Hill => Ground::Hill { amplitude: rng.gen_range(0.5..2.0), wavelength: rng.gen_range(80.0..160.0) },
    };
    let occlusion_spans = if occlusion {
        (0..num_lanes)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    let y0 = rng.gen_range(10.0..60.0);
                    vec![(y0, y0 + rng.gen_range(8.0..25.0))]
                } else {
                    Vec::new()
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    SceneSpec {
        num_lanes,
        lane_spacing,
        curvature,
        ground,
        camera_height: rng.gen_range(1.4..1.7),
        camera_pitch: rng.gen_range(2.0..4.0),
        categories: Vec::new(),
        occlusion_spans,
        lateral_shift: rng.gen_range(-0.5..0.5) * lane_spacing,
        camera: CameraSpec::default(),
        y_samples: APOLLO_Y_SAMPLES.to_vec(),
        channels: ChannelSpec { occlude_features: occlusion, ..ChannelSpec::default() },
    }
}

/// One rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T: Real> {
    pub rig: CameraRig<T>,
    pub ys: YSampling<T>,
    pub gt: Vec<Lane3D<T>>,
    pub feature_map: FeatureMap<T>,
    /// Current ground frame → previous ground frame.
    pub pose_to_prev: Option<RigidTransform<T>>,
}

/// Ego placement in the world: origin on the ground below the camera, heading `psi`
/// measured from world `+y` toward `+x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EgoFrame {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub g: f64,
}

impl EgoFrame {
    pub fn on_road(spec: &SceneSpec, y_world: f64) -> Self {
        // The ego follows the lane-group center line x = c·y².
        let x = spec.curvature * y_world * y_world;
        let psi = (2.0 * spec.curvature * y_world).atan();
        Self { x, y: y_world, psi, g: spec.ground.height(y_world) }
    }

    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.psi.sin_cos();
        [self.x + p[0] * c + p[1] * s, self.y - p[0] * s + p[1] * c, self.g + p[2]]
    }

    pub fn from_world(&self, w: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.psi.sin_cos();
        let (dx, dy) = (w[0] - self.x, w[1] - self.y);
        [dx * c - dy * s, dx * s + dy * c, w[2] - self.g]
    }

    /// Local ground → world as a rigid transform.
    pub fn transform<T: Real>(&self) -> RigidTransform<T> {
        let (s, c) = self.psi.sin_cos();
        let l = T::lit;
        let r = [[l(c), l(s), l(0.0)], [l(-s), l(c), l(0.0)], [l(0.0), l(0.0), l(1.0)]];
        RigidTransform::new(r, [l(self.x), l(self.y), l(self.g)]).expect("rotation about z is orthonormal")
    }

    /// Local ground height at local `(x, y)`.
    pub fn ground_local(&self, spec: &SceneSpec, x: f64, y: f64) -> f64 {
        let (s, c) = self.psi.sin_cos();
        spec.ground.height(self.y - x * s + y * c) - self.g
    }

    /// World `Y` where lane `i` (world `X = o + c·Y²`) crosses local `y`.
    pub fn lane_world_y(&self, spec: &SceneSpec, offset: f64, y_local: f64) -> f64 {
        let (s, c) = self.psi.sin_cos();
        let k = spec.curvature;
        // Local y of world point (o + kY², Y): (o + kY² − x_e)·s + (Y − y_e)·c.
        let qa = k * s;
        let qb = c;
        let qc = (offset - self.x) * s - self.y * c - y_local;
        let guess = self.y + y_local;
        if qa.abs() < 1e-12 {
            return -qc / qb;
        }
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
        let r1 = (-qb + disc) / (2.0 * qa);
        let r2 = (-qb - disc) / (2.0 * qa);
        if (r1 - guess).abs() <= (r2 - guess).abs() {
            r1
        } else {
            r2
        }
    }

    /// Local `(x, z)` of lane `offset` at local `y`.
    pub fn lane_point(&self, spec: &SceneSpec, offset: f64, y_local: f64) -> [f64; 3] {
        let yw = self.lane_world_y(spec, offset, y_local);
        let xw = offset + spec.curvature * yw * yw;
        let mut p = self.from_world([xw, yw, spec.ground.height(yw)]);
        // Pin the longitudinal coordinate to the sampling value exactly.
        p[1] = y_local;
        p
    }
}

/// Whether the straight segment from the camera to `p` stays above the ground.
pub(crate) fn line_of_sight(spec: &SceneSpec, ego: &EgoFrame, p: [f64; 3]) -> bool {
    if spec.ground.is_flat() {
        return true;
    }
    let cam = [0.0, 0.0, spec.camera_height];
    const STEPS: usize = 96;
    (1..STEPS).all(|i| {
        let s = i as f64 / STEPS as f64;
        let q = [cam[0] + s * (p[0] - cam[0]), cam[1] + s * (p[1] - cam[1]), cam[2] + s * (p[2] - cam[2])];
        ego.ground_local(spec, q[0], q[1]) <= q[2] + 1e-6
    })
}

fn gt_lanes<T: Real>(spec: &SceneSpec, ego: &EgoFrame, rig: &CameraRig<T>) -> Vec<Lane3D<T>> {
    let mut out = Vec::new();
    for (i, &o) in spec.offsets().iter().enumerate() {
        let (mut xs, mut zs, mut vis) = (Vec::new(), Vec::new(), Vec::new());
        for &y in &spec.y_samples {
            let p = ego.lane_point(spec, o, y);
            let in_view = rig
                .project(&GroundPoint::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2])))
                .is_ok_and(|fp| rig.in_grid(&fp));
            let seen = in_view && !spec.occluded(i, y) && line_of_sight(spec, ego, p);
            xs.push(T::lit(p[0]));
            zs.push(T::lit(p[2]));
            vis.push(if seen { T::one() } else { T::zero() });
        }
        let lane = Lane3D::new(xs, zs, vis, spec.category(i)).expect("consistent lengths");
        if lane.visible_count() >= 2 {
            out.push(lane);
        }
    }
    out
}

fn build_scene<T: Real>(spec: &SceneSpec, ego: &EgoFrame, seed: u64) -> Scene<T> {
    let rig = spec.rig::<T>();
    let ys = YSampling::new(spec.y_samples.iter().map(|&y| T::lit(y)).collect()).expect("validated sampling");
    let gt = gt_lanes(spec, ego, &rig);
    let feature_map = render::render_frame(spec, ego, &rig, seed);
    Scene { rig, ys, gt, feature_map, pose_to_prev: None }
}

/// Single frame with the ego at the road origin. `seed` drives feature noise only.
pub fn generate_scene<T: Real>(spec: &SceneSpec, seed: u64) -> Result<Scene<T>, SynthError> {
    spec.validate()?;
    Ok(build_scene(spec, &EgoFrame::on_road(spec, 0.0), seed))
}

/// `frames` consecutive frames with the ego advancing `ego_speed` meters (along
/// world `y`) per frame. Frame 0 has no previous pose.
pub fn generate_sequence<T: Real>(
    spec: &SceneSpec,
    frames: usize,
    ego_speed: f64,
    seed: u64,
) -> Result<Vec<Scene<T>>, SynthError> {
    spec.validate()?;
    if frames < 2 {
        return Err(SynthError::InvalidSpec("a sequence needs at least 2 frames".into()));
    }
    if !ego_speed.is_finite() {
        return Err(SynthError::InvalidSpec("ego_speed must be finite".into()));
    }
    let egos: Vec<EgoFrame> = (0..frames).map(|k| EgoFrame::on_road(spec, k as f64 * ego_speed)).collect();
    let mut out = Vec::with_capacity(frames);
    for (k, ego) in egos.iter().enumerate() {
        let mut scene = build_scene::<T>(spec, ego, seed.wrapping_add(k as u64));
        if k > 0 {
            scene.pose_to_prev = Some(pose_between(&egos[k - 1], ego));
        }
        out.push(scene);
    }
    Ok(out)
}

/// Transform taking `cur`-frame ground coordinates to `prev`-frame ground coordinates.
pub(crate) fn pose_between<T: Real>(prev: &EgoFrame, cur: &EgoFrame) -> RigidTransform<T> {
    if prev == cur {
        return RigidTransform::identity();
    }
    compose(&prev.transform::<T>().inverse(), &cur.transform::<T>())
}

/// Convenience for dataset builders: a seeded draw of specs.
pub fn random_specs(profile: SceneProfile, occlusion: bool, count: usize, seed: u64) -> Vec<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_spec(profile, occlusion, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor::{build_anchor, AnchorParams};
    use crate::geometry::transform_point;
    use crate::sampling::sample_anchor_features;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn flat_two() -> SceneSpec {
        SceneSpec::default()
    }

    #[test]
    fn flat_layout() {
        let s = generate_scene::<f64>(&flat_two(), 1).unwrap();
        assert_eq!(s.gt.len(), 2);
        let mut xs: Vec<f64> = s.gt.iter().map(|l| l.xs[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(xs[0], -1.75, epsilon = 1e-12);
        assert_abs_diff_eq!(xs[1], 1.75, epsilon = 1e-12);
        for l in &s.gt {
            assert!(l.xs.iter().all(|&x| (x.abs() - 1.75).abs() < 1e-12));
            assert!(l.zs.iter().all(|&z| z == 0.0));
        }
    }

    #[test]
    fn uphill_follows_grade() {
        let spec = SceneSpec { ground: Ground::Uphill { grade: 0.05 }, ..flat_two() };
        let s = generate_scene::<f64>(&spec, 1).unwrap();
        for l in &s.gt {
            for (z, y) in l.zs.iter().zip(s.ys.values()) {
                assert_abs_diff_eq!(*z, 0.05 * y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hill_follows_sine() {
        let spec = SceneSpec { ground: Ground::Hill { amplitude: 1.0, wavelength: 80.0 }, ..flat_two() };
        let s = generate_scene::<f64>(&spec, 1).unwrap();
        assert!(!s.gt.is_empty());
        for l in &s.gt {
            for (z, y) in l.zs.iter().zip(s.ys.values()) {
                assert_abs_diff_eq!(*z, (2.0 * std::f64::consts::PI * y / 80.0).sin(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn curved_lanes_are_quadratic() {
        let spec = SceneSpec { curvature: 5e-4, num_lanes: 3, ..flat_two() };
        let s = generate_scene::<f64>(&spec, 1).unwrap();
        for l in &s.gt {
            let o = l.xs[0] - 5e-4 * 25.0;
            for (x, y) in l.xs.iter().zip(s.ys.values()) {
                assert_abs_diff_eq!(*x, o + 5e-4 * y * y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn occlusion_spans_clear_visibility() {
        let spec = SceneSpec { occlusion_spans: vec![vec![(12.0, 35.0)]], ..flat_two() };
        let s = generate_scene::<f64>(&spec, 1).unwrap();
        let left = s.gt.iter().find(|l| l.xs[0] < 0.0).unwrap();
        for (v, y) in left.vis.iter().zip(s.ys.values()) {
            assert_eq!(*v == 0.0, (12.0..=35.0).contains(y), "y = {y}");
        }
        let right = s.gt.iter().find(|l| l.xs[0] > 0.0).unwrap();
        assert_eq!(right.visible_count(), 10);
    }

    #[test]
    fn out_of_view_points_invisible() {
        // Outer lanes at ±5.25 m leave the 25.6° half field of view close to the car.
        let spec = SceneSpec { num_lanes: 4, ..flat_two() };
        let s = generate_scene::<f64>(&spec, 1).unwrap();
        let outer = s.gt.iter().find(|l| l.xs[0] > 5.0).unwrap();
        assert_eq!(outer.vis[0], 0.0);
        assert_eq!(outer.vis[9], 1.0);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_scene::<f64>(&SceneSpec { num_lanes: 0, ..flat_two() }, 0).is_err());
        assert!(generate_scene::<f64>(&SceneSpec { lane_spacing: 0.0, ..flat_two() }, 0).is_err());
        assert!(generate_scene::<f64>(&SceneSpec { categories: vec![1], ..flat_two() }, 0).is_err());
        assert!(generate_sequence::<f64>(&flat_two(), 1, 5.0, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec {
            channels: ChannelSpec { noise_std: 0.05, ..ChannelSpec::default() },
            ..random_spec(SceneProfile::Hill, true, &mut ChaCha8Rng::seed_from_u64(3))
        };
        let a = generate_scene::<f64>(&spec, 11).unwrap();
        let b = generate_scene::<f64>(&spec, 11).unwrap();
        assert_eq!(a.feature_map.to_bytes(), b.feature_map.to_bytes());
        assert_eq!(a.gt, b.gt);
        let c = generate_scene::<f64>(&spec, 12).unwrap();
        assert_ne!(a.feature_map.to_bytes(), c.feature_map.to_bytes());
    }

    #[test]
    fn presence_mean_on_visible_flat_lanes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        for _ in 0..20 {
            let spec = random_spec(SceneProfile::FlatCurved, false, &mut rng);
            let s = generate_scene::<f64>(&spec, 0).unwrap();
            for l in s.gt.iter().filter(|l| l.visible_count() == l.len()) {
                let points = s.ys.values().iter().zip(l.xs.iter().zip(&l.zs)).map(|(&y, (&x, &z))| GroundPoint::new(x, y, z));
                let a = crate::anchor::Anchor {
                    params: AnchorParams::new(0.0, 0.0, 0.0, 0.0).unwrap(),
                    points: points.collect(),
                };
                let f = sample_anchor_features(&a, &s.feature_map, &s.rig);
                let mean = (0..f.n).map(|k| f.point(k)[1]).sum::<f64>() / f.n as f64;
                assert!(mean >= 0.9, "presence mean {mean}");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn speed_zero_sequence_is_static() {
        let spec = SceneSpec { curvature: 3e-4, ..flat_two() };
        let seq = generate_sequence::<f64>(&spec, 3, 0.0, 4).unwrap();
        assert!(seq[0].pose_to_prev.is_none());
        for s in &seq[1..] {
            assert_eq!(s.pose_to_prev.unwrap(), RigidTransform::identity());
            assert_eq!(s.gt, seq[0].gt);
            assert_eq!(s.feature_map, seq[0].feature_map);
        }
    }

    #[test]
    fn straight_sequence_translates() {
        let seq = generate_sequence::<f64>(&flat_two(), 3, 5.0, 0).unwrap();
        for s in &seq[1..] {
            let p = transform_point(&GroundPoint::new(0.3, 20.0, 0.0), s.pose_to_prev.as_ref().unwrap());
            assert_abs_diff_eq!(p.x, 0.3, epsilon = 1e-12);
            assert_abs_diff_eq!(p.y, 25.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.z, 0.0, epsilon = 1e-12);
        }
    }

    fn chain_error(spec: &SceneSpec, frames: usize, speed: f64) -> f64 {
        let seq = generate_sequence::<f64>(spec, frames, speed, 0).unwrap();
        let offsets = spec.offsets();
        let mut worst: f64 = 0.0;
        for k in 1..frames {
            for l in &seq[k].gt {
                for (i, &y) in seq[k].ys.values().iter().enumerate() {
                    let mut p = GroundPoint::new(l.xs[i], y, l.zs[i]);
                    for j in (1..=k).rev() {
                        p = transform_point(&p, seq[j].pose_to_prev.as_ref().unwrap());
                    }
                    // Frame 0 coincides with the world frame.
                    let err = offsets
                        .iter()
                        .map(|o| (p.x - (o + spec.curvature * p.y * p.y)).abs())
                        .fold(f64::INFINITY, f64::min)
                        .max((p.z - spec.ground.height(p.y)).abs());
                    worst = worst.max(err);
                }
            }
        }
        worst
    }

    #[test]
    fn curved_chain_maps_back_to_frame_zero() {
        let spec = SceneSpec {
            curvature: 8e-4,
            num_lanes: 3,
            ground: Ground::Hill { amplitude: 1.0, wavelength: 90.0 },
            ..flat_two()
        };
        assert!(chain_error(&spec, 10, 4.0) < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gt_on_ground_surface(seed in 0u64..1000, profile in 0usize..3) {
            let profile = [SceneProfile::FlatCurved, SceneProfile::UpDown, SceneProfile::Hill][profile];
            let spec = random_spec(profile, false, &mut ChaCha8Rng::seed_from_u64(seed));
            let s = generate_scene::<f64>(&spec, seed).unwrap();
            for l in &s.gt {
                for (z, y) in l.zs.iter().zip(s.ys.values()) {
                    prop_assert!((z - spec.ground.height(*y)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn chain_consistency(seed in 0u64..1000, speed in 1.0f64..8.0) {
            let spec = random_spec(SceneProfile::Hill, false, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(chain_error(&spec, 4, speed) < 1e-6);
        }
    }

    #[test]
    fn anchor_on_lane_samples_lane_channels() {
        let s = generate_scene::<f64>(&flat_two(), 0).unwrap();
        let a = build_anchor(AnchorParams::new(1.75, 0.0, 0.0, 0.0).unwrap(), &s.ys);
        let f = sample_anchor_features(&a, &s.feature_map, &s.rig);
        for k in 0..f.n {
            assert_abs_diff_eq!(f.point(k)[1], 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(f.point(k)[3], 1.0, epsilon = 1e-9);
        }
    }
}
