//! Ground/camera coordinate frames, rigid transforms and pinhole projection
//! onto the down-scaled feature grid.
//!
//! Ground frame: origin on the ground right below the camera, `x` to the right,
//! `y` forward, `z` up. Camera frame: `x` right, `y` down, `z` forward.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::Real;

/// Points at or closer than this depth to the camera plane do not project.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point depth {0} is at or behind the camera plane")]
    DepthNonPositive(f64),
    #[error("rotation is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid image dimensions: {0}")]
    InvalidDims(String),
}

fn orthonormal_tol<T: Real>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GroundPoint<T: Real> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> GroundPoint<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Self) -> T {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    fn as_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

type Mat3<T> = [[T; 3]; 3];

fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec<T: Real>(a: &Mat3<T>, v: &[T; 3]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2];
    }
    out
}

fn transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn identity3<T: Real>() -> Mat3<T> {
    let mut m = [[T::zero(); 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

fn det3<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Pinhole intrinsics `K`, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T> {
    k: Mat3<T>,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(k: [[T; 3]; 3]) -> Result<Self, GeometryError> {
        if k[2][2] != T::one() || k[2][0] != T::zero() || k[2][1] != T::zero() {
            return Err(GeometryError::InvalidIntrinsics("last row must be [0, 0, 1]".into()));
        }
        if !(k[0][0] > T::zero() && k[1][1] > T::zero()) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if k.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("non-finite entry".into()));
        }
        Ok(Self { k })
    }

    pub fn from_focal(fx: T, fy: T, cx: T, cy: T) -> Result<Self, GeometryError> {
        let z = T::zero();
        Self::new([[fx, z, cx], [z, fy, cy], [z, z, T::one()]])
    }

    pub fn matrix(&self) -> &[[T; 3]; 3] {
        &self.k
    }

    /// Inverse of the upper-triangular `K` applied to a homogeneous pixel.
    fn unproject(&self, u: T, v: T, d: T) -> [T; 3] {
        let k = &self.k;
        let y = (v - k[1][2] * d) / k[1][1];
        let x = (u - k[0][1] * y - k[0][2] * d) / k[0][0];
        [x, y, d]
    }
}

impl<T: Real> Serialize for CameraIntrinsics<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a, T> {
            #[serde(rename = "K")]
            k: &'a [T],
        }
        let flat: Vec<T> = self.k.iter().flatten().copied().collect();
        Repr { k: &flat }.serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for CameraIntrinsics<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr<T> {
            #[serde(rename = "K")]
            k: Vec<T>,
        }
        let r: Repr<T> = Repr::deserialize(d)?;
        if r.k.len() != 9 {
            return Err(serde::de::Error::custom("\"K\" must hold 9 values"));
        }
        let mut k = [[T::zero(); 3]; 3];
        for (i, v) in r.k.into_iter().enumerate() {
            k[i / 3][i % 3] = v;
        }
        Self::new(k).map_err(serde::de::Error::custom)
    }
}

/// Rotation plus translation, `p ↦ r·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T> {
    r: Mat3<T>,
    t: [T; 3],
}

impl<T: Real> RigidTransform<T> {
    /// Validates `rᵀr = I` and `det r = 1`.
    pub fn new(r: [[T; 3]; 3], t: [T; 3]) -> Result<Self, GeometryError> {
        let rtr = mat_mul(&transpose(&r), &r);
        let eye = identity3::<T>();
        let mut dev = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                dev = dev.max((rtr[i][j] - eye[i][j]).abs());
            }
        }
        dev = dev.max((det3(&r) - T::one()).abs());
        if !(dev <= orthonormal_tol::<T>()) || t.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NotOrthonormal(dev.to_f64_lossy()));
        }
        Ok(Self { r, t })
    }

    pub fn identity() -> Self {
        Self { r: identity3(), t: [T::zero(); 3] }
    }

    pub fn translation(x: T, y: T, z: T) -> Self {
        Self { r: identity3(), t: [x, y, z] }
    }

    /// Rotation about the ground `z` axis (counter-clockwise seen from above).
    pub fn rot_z(angle_rad: T) -> Self {
        let (s, c) = angle_rad.sin_cos();
        let z = T::zero();
        Self { r: [[c, -s, z], [s, c, z], [z, z, T::one()]], t: [z; 3] }
    }

    pub fn rot_x(angle_rad: T) -> Self {
        let (s, c) = angle_rad.sin_cos();
        let z = T::zero();
        Self { r: [[T::one(), z, z], [z, c, -s], [z, s, c]], t: [z; 3] }
    }

    pub fn with_translation(mut self, t: [T; 3]) -> Self {
        self.t = t;
        self
    }

    pub fn rotation(&self) -> &[[T; 3]; 3] {
        &self.r
    }

    pub fn translation_vec(&self) -> &[T; 3] {
        &self.t
    }

    pub fn apply(&self, p: &GroundPoint<T>) -> GroundPoint<T> {
        let v = mat_vec(&self.r, &p.as_array());
        GroundPoint::new(v[0] + self.t[0], v[1] + self.t[1], v[2] + self.t[2])
    }

    fn apply_raw(&self, p: [T; 3]) -> [T; 3] {
        let v = mat_vec(&self.r, &p);
        [v[0] + self.t[0], v[1] + self.t[1], v[2] + self.t[2]]
    }

    pub fn inverse(&self) -> Self {
        let rt = transpose(&self.r);
        let t = mat_vec(&rt, &self.t);
        Self { r: rt, t: [-t[0], -t[1], -t[2]] }
    }

    /// Largest absolute difference between the 3×4 matrices of two transforms.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let mut m = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((self.r[i][j] - other.r[i][j]).abs());
            }
            m = m.max((self.t[i] - other.t[i]).abs());
        }
        m
    }
}

/// `compose(a, b)` applies `b` first, then `a`.
pub fn compose<T: Real>(a: &RigidTransform<T>, b: &RigidTransform<T>) -> RigidTransform<T> {
    let r = mat_mul(&a.r, &b.r);
    let at = mat_vec(&a.r, &b.t);
    RigidTransform { r, t: [at[0] + a.t[0], at[1] + a.t[1], at[2] + a.t[2]] }
}

pub fn transform_point<T: Real>(p: &GroundPoint<T>, t: &RigidTransform<T>) -> GroundPoint<T> {
    t.apply(p)
}

impl<T: Real> Serialize for RigidTransform<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a, T> {
            #[serde(rename = "T")]
            t: &'a [T],
        }
        let mut flat = Vec::with_capacity(12);
        for i in 0..3 {
            flat.extend_from_slice(&self.r[i]);
            flat.push(self.t[i]);
        }
        Repr { t: &flat }.serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for RigidTransform<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr<T> {
            #[serde(rename = "T")]
            t: Vec<T>,
        }
        let repr: Repr<T> = Repr::deserialize(d)?;
        if repr.t.len() != 12 {
            return Err(serde::de::Error::custom("\"T\" must hold 12 values (row-major 3x4)"));
        }
        let mut r = [[T::zero(); 3]; 3];
        let mut t = [T::zero(); 3];
        for i in 0..3 {
            r[i].copy_from_slice(&repr.t[i * 4..i * 4 + 3]);
            t[i] = repr.t[i * 4 + 3];
        }
        Self::new(r, t).map_err(serde::de::Error::custom)
    }
}

/// Input image size and feature grid size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DimsRepr", into = "DimsRepr")]
pub struct ImageDims {
    pub h: usize,
    pub w: usize,
    pub h_f: usize,
    pub w_f: usize,
}

#[derive(Serialize, Deserialize)]
struct DimsRepr {
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    #[serde(rename = "Hf")]
    h_f: usize,
    #[serde(rename = "Wf")]
    w_f: usize,
}

impl From<ImageDims> for DimsRepr {
    fn from(d: ImageDims) -> Self {
        Self { h: d.h, w: d.w, h_f: d.h_f, w_f: d.w_f }
    }
}

impl TryFrom<DimsRepr> for ImageDims {
    type Error = GeometryError;
    fn try_from(r: DimsRepr) -> Result<Self, Self::Error> {
        ImageDims::new(r.h, r.w, r.h_f, r.w_f)
    }
}

impl ImageDims {
    pub fn new(h: usize, w: usize, h_f: usize, w_f: usize) -> Result<Self, GeometryError> {
        if h == 0 || w == 0 || h_f == 0 || w_f == 0 {
            return Err(GeometryError::InvalidDims("all dimensions must be positive".into()));
        }
        if h_f > h || w_f > w {
            return Err(GeometryError::InvalidDims("feature grid larger than image".into()));
        }
        Ok(Self { h, w, h_f, w_f })
    }

    fn scale_u<T: Real>(&self) -> T {
        T::lit(self.w_f as f64) / T::lit(self.w as f64)
    }

    fn scale_v<T: Real>(&self) -> T {
        T::lit(self.h_f as f64) / T::lit(self.h as f64)
    }
}

/// Location on the feature grid (column `u`, row `v`) with camera depth `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePoint<T> {
    pub u: T,
    pub v: T,
    pub d: T,
}

pub fn project_ground_to_feature<T: Real>(
    p: &GroundPoint<T>,
    k: &CameraIntrinsics<T>,
    t_gc: &RigidTransform<T>,
    dims: &ImageDims,
) -> Result<FeaturePoint<T>, GeometryError> {
    let cam = t_gc.apply_raw(p.as_array());
    let h = mat_vec(&k.k, &cam);
    let d = h[2];
    if !(d > T::lit(MIN_DEPTH)) {
        return Err(GeometryError::DepthNonPositive(d.to_f64_lossy()));
    }
    Ok(FeaturePoint { u: dims.scale_u::<T>() * h[0] / d, v: dims.scale_v::<T>() * h[1] / d, d })
}

/// Inverse of [`project_ground_to_feature`] for a known depth.
pub fn backproject_feature<T: Real>(
    fp: &FeaturePoint<T>,
    k: &CameraIntrinsics<T>,
    t_gc: &RigidTransform<T>,
    dims: &ImageDims,
) -> GroundPoint<T> {
    let u_img = fp.u / dims.scale_u::<T>() * fp.d;
    let v_img = fp.v / dims.scale_v::<T>() * fp.d;
    let cam = k.unproject(u_img, v_img, fp.d);
    let g = t_gc.inverse().apply_raw(cam);
    GroundPoint::new(g[0], g[1], g[2])
}

/// Calibrated camera: intrinsics, ground-to-camera extrinsics and grid sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CameraRig<T: Real> {
    #[serde(flatten)]
    pub intrinsics: CameraIntrinsics<T>,
    #[serde(flatten)]
    pub extrinsics: RigidTransform<T>,
    #[serde(flatten)]
    pub dims: ImageDims,
}

impl<T: Real> CameraRig<T> {
    /// Forward-looking camera `height` meters above the ground origin, tilted
    /// down by `pitch_deg`.
    pub fn forward_camera(
        intrinsics: CameraIntrinsics<T>,
        dims: ImageDims,
        height: T,
        pitch_deg: T,
    ) -> Self {
        let (s, c) = pitch_deg.to_radians().sin_cos();
        let z = T::zero();
        // Rows are the camera axes expressed in ground coordinates.
        let r = [[T::one(), z, z], [z, -s, -c], [z, c, -s]];
        let t = mat_vec(&r, &[z, z, -height]);
        Self { intrinsics, extrinsics: RigidTransform { r, t }, dims }
    }

    pub fn project(&self, p: &GroundPoint<T>) -> Result<FeaturePoint<T>, GeometryError> {
        project_ground_to_feature(p, &self.intrinsics, &self.extrinsics, &self.dims)
    }

    pub fn backproject(&self, fp: &FeaturePoint<T>) -> GroundPoint<T> {
        backproject_feature(fp, &self.intrinsics, &self.extrinsics, &self.dims)
    }

    /// Camera center and unit ray direction (ground frame) through feature cell `(u, v)`.
    pub fn feature_ray(&self, u: T, v: T) -> (GroundPoint<T>, [T; 3]) {
        let fp = FeaturePoint { u, v, d: T::one() };
        let far = self.backproject(&fp);
        let inv = self.extrinsics.inverse();
        let c = GroundPoint::new(inv.t[0], inv.t[1], inv.t[2]);
        let dir = [far.x - c.x, far.y - c.y, far.z - c.z];
        let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        (c, [dir[0] / n, dir[1] / n, dir[2] / n])
    }

    /// Whether a projected point lands inside the feature grid.
    pub fn in_grid(&self, fp: &FeaturePoint<T>) -> bool {
        let max_u = T::lit((self.dims.w_f - 1) as f64);
        let max_v = T::lit((self.dims.h_f - 1) as f64);
        fp.u >= T::zero() && fp.v >= T::zero() && fp.u <= max_u && fp.v <= max_v
    }
}
