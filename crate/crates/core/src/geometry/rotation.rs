use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Unit-quaternion rotation, canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds a rotation from `(w, x, y, z)`, normalizing the input.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self::from_unit(UnitQuaternion::from_quaternion(q)))
    }

    pub fn from_unit(q: UnitQuaternion<f64>) -> Self {
        if q.w < 0.0 {
            Rotation(UnitQuaternion::new_unchecked(-q.into_inner()))
        } else {
            Rotation(q)
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        match Unit::try_new(*axis, 1e-15) {
            Some(a) => Self::from_unit(UnitQuaternion::from_axis_angle(&a, angle)),
            None => Self::identity(),
        }
    }

    /// Exponential map of a rotation vector (axis * angle).
    pub fn from_rotation_vector(v: &Vector3<f64>) -> Self {
        Self::from_unit(UnitQuaternion::from_scaled_axis(*v))
    }

    /// Projects an arbitrary 3x3 matrix onto SO(3).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let d = (u * v_t).determinant().signum();
        let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
        let rot = nalgebra::Rotation3::from_matrix_unchecked(r);
        Self::from_unit(UnitQuaternion::from_rotation_matrix(&rot))
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// Components in `(w, x, y, z)` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse(&self) -> Self {
        Self::from_unit(self.0.inverse())
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let q = self.0.quaternion();
        let v = Vector3::new(q.i, q.j, q.k).norm();
        2.0 * v.atan2(q.w.abs())
    }

    /// Axis and angle with the angle in `[0, pi]`. The axis is `None` for
    /// the identity.
    pub fn axis_angle(&self) -> (Option<Vector3<f64>>, f64) {
        let q = self.0.quaternion();
        let v = Vector3::new(q.i, q.j, q.k);
        let s = v.norm();
        if s < 1e-15 {
            return (None, 0.0);
        }
        (Some(v / s), 2.0 * s.atan2(q.w))
    }

    /// Logarithm map: rotation vector with norm in `[0, pi]`.
    pub fn rotation_vector(&self) -> Vector3<f64> {
        match self.axis_angle() {
            (Some(axis), angle) => axis * angle,
            (None, _) => Vector3::zeros(),
        }
    }

    /// Angle of `self * other^-1`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (*self * other.inverse()).angle()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation::from_unit(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.wxyz().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        Rotation::from_wxyz(w, x, y, z).map_err(serde::de::Error::custom)
    }
}

/// Rigid transform `x' = R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(v)
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose::new(r_inv, -r_inv.rotate(&self.translation))
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    /// Camera center in the source frame when this pose maps world to camera.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.inverse().rotate(&self.translation)
    }

    /// World-to-camera pose for a camera at `eye` looking at `target`, image
    /// `y` pointing roughly along `-up`.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Pose {
        let z = (target - eye).normalize();
        let mut x = z.cross(up);
        if x.norm() < 1e-9 {
            x = z.cross(&Vector3::x());
        }
        let x = x.normalize();
        let y = z.cross(&x);
        // Rows of the world-to-camera rotation are the camera axes.
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = Rotation::from_matrix(&r);
        Pose::new(rotation, -rotation.rotate(eye))
    }
}
