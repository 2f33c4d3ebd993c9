//! Rigid (rotation + translation) transforms about an explicit centre.
//!
//! A [`RigidTransform`] maps moving-volume world coordinates to reference
//! world coordinates: `apply(q) = R (q - c) + c + t`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Angles closer than this to ±π/2 around Y are treated as gimbal lock.
const GIMBAL_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("rotation is in gimbal lock (pitch = ±90°); Euler ZYX angles are not unique")]
    GimbalLock,
    #[error("matrix is not a proper rotation")]
    NotARotation,
}

/// Optimizer-facing parameterization: translation in mm and intrinsic
/// Z-Y-X Euler angles in radians, stored as `r = [rx, ry, rz]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransformParams {
    pub t: Vector3<f64>,
    pub r: Vector3<f64>,
}

impl TransformParams {
    pub fn new(t: [f64; 3], r: [f64; 3]) -> Self {
        Self { t: Vector3::from(t), r: Vector3::from(r) }
    }

    pub fn zeros() -> Self {
        Self::default()
    }

    /// Packs into `[tx, ty, tz, rx*s, ry*s, rz*s]`.
    pub fn to_scaled(&self, angle_scale: f64) -> [f64; 6] {
        [self.t.x, self.t.y, self.t.z, self.r.x * angle_scale, self.r.y * angle_scale, self.r.z * angle_scale]
    }

    pub fn from_scaled(x: &[f64; 6], angle_scale: f64) -> Self {
        Self {
            t: Vector3::new(x[0], x[1], x[2]),
            r: Vector3::new(x[3] / angle_scale, x[4] / angle_scale, x[5] / angle_scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    center: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros(), center: Vector3::zeros() }
    }

    pub fn translation_only(t: Vector3<f64>) -> Self {
        Self { translation: t, ..Self::identity() }
    }

    /// Builds a transform from an explicit rotation matrix, checking it is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, center: Vector3<f64>) -> Result<Self, TransformError> {
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(orth <= 1e-9) || !((rotation.determinant() - 1.0).abs() <= 1e-9) {
            return Err(TransformError::NotARotation);
        }
        Ok(Self { rotation, translation, center })
    }

    /// `rotation = Rz(rz) · Ry(ry) · Rx(rx)`.
    pub fn from_params(p: &TransformParams, center: Vector3<f64>) -> Self {
        let rotation = *Rotation3::from_euler_angles(p.r.x, p.r.y, p.r.z).matrix();
        Self { rotation, translation: p.t, center }
    }

    pub fn to_params(&self) -> Result<TransformParams, TransformError> {
        let m = &self.rotation;
        // m[(2,0)] = -sin(ry)
        let sy = -m[(2, 0)];
        if (sy.abs() - 1.0).abs() < GIMBAL_EPS || sy.abs() > 1.0 {
            return Err(TransformError::GimbalLock);
        }
        let ry = sy.asin();
        let rx = m[(2, 1)].atan2(m[(2, 2)]);
        let rz = m[(1, 0)].atan2(m[(0, 0)]);
        Ok(TransformParams { t: self.translation, r: Vector3::new(rx, ry, rz) })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    /// Net translation applied to the world origin: `apply(q) = R q + offset`.
    pub fn offset(&self) -> Vector3<f64> {
        self.center + self.translation - self.rotation * self.center
    }

    pub fn apply_point(&self, q: Vector3<f64>) -> Vector3<f64> {
        self.rotation * (q - self.center) + self.center + self.translation
    }

    /// `compose(a, b)` applies `b` first, then `a`. The result keeps `b`'s centre.
    pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
        let rotation = a.rotation * b.rotation;
        let offset = a.rotation * b.offset() + a.offset();
        Self::from_offset(rotation, offset, b.center)
    }

    pub fn then(&self, next: &RigidTransform) -> RigidTransform {
        Self::compose(next, self)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rotation = self.rotation.transpose();
        let offset = -(rotation * self.offset());
        Self::from_offset(rotation, offset, self.center)
    }

    fn from_offset(rotation: Matrix3<f64>, offset: Vector3<f64>, center: Vector3<f64>) -> Self {
        // offset = c + t - R c  =>  t = offset - c + R c
        let translation = offset - center + rotation * center;
        Self { rotation, translation, center }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Same mapping, re-expressed about another rotation centre.
    pub fn recentered(&self, center: Vector3<f64>) -> Self {
        Self::from_offset(self.rotation, self.offset(), center)
    }

    pub fn is_exact_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

pub const TRANSFORM_SCHEMA_VERSION: &str = "trusmap.transform/1";

/// On-disk transform: translation in mm, Euler ZYX angles in degrees listed
/// as `[rx, ry, rz]`, rotation centre in mm (LPS).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformFile {
    #[serde(default = "transform_schema_version")]
    pub schema_version: String,
    pub translation_mm: [f64; 3],
    pub rotation_zyx_deg: [f64; 3],
    pub center_mm: [f64; 3],
}

fn transform_schema_version() -> String {
    TRANSFORM_SCHEMA_VERSION.to_string()
}

impl TransformFile {
    pub fn from_transform(t: &RigidTransform) -> Result<Self, TransformError> {
        let p = t.to_params()?;
        Ok(Self {
            schema_version: transform_schema_version(),
            translation_mm: p.t.into(),
            rotation_zyx_deg: [p.r.x.to_degrees(), p.r.y.to_degrees(), p.r.z.to_degrees()],
            center_mm: t.center.into(),
        })
    }

    pub fn to_transform(&self) -> RigidTransform {
        let r = self.rotation_zyx_deg.map(f64::to_radians);
        RigidTransform::from_params(&TransformParams::new(self.translation_mm, r), Vector3::from(self.center_mm))
    }
}
