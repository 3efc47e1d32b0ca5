use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Tolerance on `RᵀR = I` and `det R = 1` for a stored rotation.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Largest deviation from orthonormality that [`RigidTransform::from_matrix`]
/// repairs by projection; anything worse is rejected.
pub const REPAIR_TOL: f64 = 1e-3;

/// Rotation plus translation, `p' = R p + t`.
///
/// Extrinsics map the sensor frame into the ISO 8855 vehicle frame (origin at
/// the center of the rear axle, x forward, y left, z up).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 16]", into = "[f64; 16]")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::from(t) }
    }

    /// Builds a transform from intrinsic roll (x), pitch (y), yaw (z) angles
    /// in radians. A positive pitch tilts the sensor's x axis downward.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, t: [f64; 3]) -> Self {
        Self { rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(), translation: Vector3::from(t) }
    }

    /// Checked constructor; the rotation must already be orthonormal with
    /// determinant +1 within [`ORTHONORMAL_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let dev = orthonormal_deviation(&rotation);
        if dev > ORTHONORMAL_TOL {
            return Err(GeometryError::NotARigidTransform { deviation: dev, determinant: rotation.determinant() });
        }
        Ok(Self { rotation, translation })
    }

    /// Parses a 4×4 row-major homogeneous matrix. Rotations within
    /// [`REPAIR_TOL`] of orthonormal are replaced by the nearest rotation
    /// (polar decomposition); the bottom row must be `[0 0 0 1]`.
    pub fn from_matrix(m: &[f64; 16]) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom.iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > REPAIR_TOL) {
            return Err(GeometryError::NotHomogeneous(bottom));
        }
        let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let t = Vector3::new(m[3], m[7], m[11]);
        let dev = orthonormal_deviation(&r);
        if dev > REPAIR_TOL {
            return Err(GeometryError::NotARigidTransform { deviation: dev, determinant: r.determinant() });
        }
        let rotation = if dev > 0.0 { nearest_rotation(&r) } else { r };
        Ok(Self { rotation, translation: t })
    }

    pub fn to_matrix(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    pub fn homogeneous(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.to_matrix())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(p) + self.translation;
        [q[0], q[1], q[2]]
    }

    pub fn rotate_vector(&self, v: [f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(v);
        [q[0], q[1], q[2]]
    }

    /// `(self ∘ other)(p) = self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl TryFrom<[f64; 16]> for RigidTransform {
    type Error = GeometryError;

    fn try_from(m: [f64; 16]) -> Result<Self, Self::Error> {
        Self::from_matrix(&m)
    }
}

impl From<RigidTransform> for [f64; 16] {
    fn from(tf: RigidTransform) -> Self {
        tf.to_matrix()
    }
}

/// Max of `‖RᵀR − I‖_max` and `|det R − 1|`.
pub fn orthonormal_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let off = gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    off.max((r.determinant() - 1.0).abs())
}

fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut q = u * v_t;
    if q.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        q = u_fixed * v_t;
    }
    q
}
