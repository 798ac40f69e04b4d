//! Dense feature maps, bilinear lookup and per-anchor feature extraction in
//! the current frame or a previous frame.
//!
//! Cell `(row, col)` has its center at `(u, v) = (col, row)`.

use std::io::{self, Read, Write};

use crate::anchor::Anchor;
use crate::geometry::{transform_point, CameraRig, RigidTransform};
use crate::scalar::Real;

pub const FEATURE_MAGIC: &[u8; 4] = b"A3LF";

#[derive(Debug, thiserror::Error)]
pub enum FeatureMapError {
    #[error("data length {got} does not match {h_f}x{w_f}x{c}")]
    Shape { h_f: usize, w_f: usize, c: usize, got: usize },
    #[error("feature map contains non-finite values")]
    NonFinite,
    #[error("bad magic bytes, expected A3LF")]
    BadMagic,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Row-major `h_f × w_f × c` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    h_f: usize,
    w_f: usize,
    c: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(h_f: usize, w_f: usize, c: usize, data: Vec<T>) -> Result<Self, FeatureMapError> {
        if data.len() != h_f * w_f * c {
            return Err(FeatureMapError::Shape { h_f, w_f, c, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FeatureMapError::NonFinite);
        }
        Ok(Self { h_f, w_f, c, data })
    }

    pub fn filled(h_f: usize, w_f: usize, c: usize, value: T) -> Self {
        Self { h_f, w_f, c, data: vec![value; h_f * w_f * c] }
    }

    pub fn height(&self) -> usize {
        self.h_f
    }

    pub fn width(&self) -> usize {
        self.w_f
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn cell(&self, row: usize, col: usize) -> &[T] {
        let o = (row * self.w_f + col) * self.c;
        &self.data[o..o + self.c]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [T] {
        let o = (row * self.w_f + col) * self.c;
        &mut self.data[o..o + self.c]
    }

    /// Serializes as `A3LF`, three little-endian `u32` dims, then `f32` values.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        for d in [self.h_f, self.w_f, self.c] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, FeatureMapError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(FeatureMapError::BadMagic);
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| T::from_f32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])).unwrap_or(T::nan()))
            .collect();
        Self::new(dims[0], dims[1], dims[2], data)
    }
}

/// Bilinear lookup; anything outside `[0, w_f-1] × [0, h_f-1]` is the zero vector.
pub fn bilinear_sample<T: Real>(fm: &FeatureMap<T>, u: T, v: T) -> Vec<T> {
    let mut out = vec![T::zero(); fm.c];
    bilinear_sample_into(fm, u, v, &mut out);
    out
}

/// Like [`bilinear_sample`] but writes into `out`; returns whether `(u, v)` was in bounds.
pub fn bilinear_sample_into<T: Real>(fm: &FeatureMap<T>, u: T, v: T, out: &mut [T]) -> bool {
    let max_u = T::lit((fm.w_f - 1) as f64);
    let max_v = T::lit((fm.h_f - 1) as f64);
    if !(u >= T::zero() && v >= T::zero() && u <= max_u && v <= max_v) {
        out.iter_mut().for_each(|o| *o = T::zero());
        return false;
    }
    let c0 = u.floor().to_usize().unwrap_or(0).min(fm.w_f - 1);
    let r0 = v.floor().to_usize().unwrap_or(0).min(fm.h_f - 1);
    let c1 = (c0 + 1).min(fm.w_f - 1);
    let r1 = (r0 + 1).min(fm.h_f - 1);
    let fu = u - T::lit(c0 as f64);
    let fv = v - T::lit(r0 as f64);
    let w00 = (T::one() - fu) * (T::one() - fv);
    let w01 = fu * (T::one() - fv);
    let w10 = (T::one() - fu) * fv;
    let w11 = fu * fv;
    let (a, b, c, d) = (fm.cell(r0, c0), fm.cell(r0, c1), fm.cell(r1, c0), fm.cell(r1, c1));
    for (i, o) in out.iter_mut().enumerate() {
        *o = w00 * a[i] + w01 * b[i] + w10 * c[i] + w11 * d[i];
    }
    true
}

/// `N × C` features for one anchor plus a per-point validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorFeature<T> {
    pub n: usize,
    pub c: usize,
    /// Row-major `N × C`.
    pub per_point: Vec<T>,
    pub valid_mask: Vec<bool>,
}

impl<T: Real> AnchorFeature<T> {
    pub fn zeros(n: usize, c: usize) -> Self {
        Self { n, c, per_point: vec![T::zero(); n * c], valid_mask: vec![false; n] }
    }

    pub fn point(&self, k: usize) -> &[T] {
        &self.per_point[k * self.c..(k + 1) * self.c]
    }
}

pub fn sample_anchor_features<T: Real>(a: &Anchor<T>, fm: &FeatureMap<T>, rig: &CameraRig<T>) -> AnchorFeature<T> {
    sample_points(a.points.iter().copied(), a.points.len(), fm, rig)
}

/// Samples the previous frame's map at the anchor points carried through `pose`
/// (current ground frame → previous ground frame).
pub fn sample_cross_frame<T: Real>(
    a: &Anchor<T>,
    prev_fm: &FeatureMap<T>,
    prev_rig: &CameraRig<T>,
    pose: &RigidTransform<T>,
) -> AnchorFeature<T> {
    sample_points(a.points.iter().map(|p| transform_point(p, pose)), a.points.len(), prev_fm, prev_rig)
}

fn sample_points<T: Real>(
    points: impl Iterator<Item = crate::geometry::GroundPoint<T>>,
    n: usize,
    fm: &FeatureMap<T>,
    rig: &CameraRig<T>,
) -> AnchorFeature<T> {
    let mut feat = AnchorFeature::zeros(n, fm.c);
    for (k, p) in points.enumerate() {
        if let Ok(fp) = rig.project(&p) {
            let row = &mut feat.per_point[k * fm.c..(k + 1) * fm.c];
            feat.valid_mask[k] = bilinear_sample_into(fm, fp.u, fp.v, row);
        }
    }
    feat
}
