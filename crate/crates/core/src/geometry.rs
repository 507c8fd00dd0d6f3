//! Planar poses, rigid transforms and angle arithmetic.
//!
//! Angles live in the lower-inclusive range `[-π, π)`, so `π` wraps to `-π`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::invalid(format!("angle must be finite, got {a}")));
    }
    Ok(wrap_finite(a))
}

/// `wrap_angle(a - b)`.
pub fn angle_diff(a: f64, b: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!(
            "angles must be finite, got {a} and {b}"
        )));
    }
    Ok(wrap_finite(a - b))
}

/// Infallible wrap for values already known to be finite.
///
/// Values within one period of the range are shifted by a single `±2π` so that
/// `wrap(-a) == -wrap(a)` holds bit-exactly away from the `±π` boundary.
pub(crate) fn wrap_finite(a: f64) -> f64 {
    const TAU: f64 = 2.0 * PI;
    if (-PI..PI).contains(&a) {
        return a;
    }
    if (PI..3.0 * PI).contains(&a) {
        return a - TAU;
    }
    if (-3.0 * PI..-PI).contains(&a) {
        return a + TAU;
    }
    let r = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if r >= PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Pose of a rigid body in the plane. `theta` is kept in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_finite(theta),
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn to_parent(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.rotation() * p + self.position()
    }

    /// Maps a point expressed in the parent frame into this pose's frame.
    pub fn to_local(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.rotation().transpose() * (p - self.position())
    }

    /// Rotates a direction from this pose's frame into the parent frame.
    pub fn rotate_to_parent(&self, v: Vector2<f64>) -> Vector2<f64> {
        self.rotation() * v
    }

    /// `self ∘ other`: `other` is expressed in this pose's frame.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let p = self.to_parent(other.position());
        Pose2::new(p.x, p.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2 {
        let p = self.rotation().transpose() * -self.position();
        Pose2::new(p.x, p.y, -self.theta)
    }

    /// Pose of `other` expressed in this pose's frame.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

fn check_rotation<const N: usize>(r: &nalgebra::SMatrix<f64, N, N>) -> Result<()>
where
    nalgebra::Const<N>: nalgebra::DimMin<nalgebra::Const<N>, Output = nalgebra::Const<N>>,
{
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("rotation has non-finite entries"));
    }
    let err = (r.transpose() * r - nalgebra::SMatrix::<f64, N, N>::identity()).abs().max();
    if err > ORTHONORMAL_TOL {
        return Err(Error::invalid(format!(
            "rotation is not orthonormal (max |RᵀR - I| = {err:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::invalid(format!("rotation determinant is {det}, expected +1")));
    }
    Ok(())
}

/// Planar rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform2 {
    rotation: Matrix2<f64>,
    translation: Vector2<f64>,
}

impl Transform2 {
    pub fn new(rotation: Matrix2<f64>, translation: Vector2<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_pose(pose: &Pose2) -> Self {
        Self {
            rotation: pose.rotation(),
            translation: pose.position(),
        }
    }

    pub fn rotation(&self) -> &Matrix2<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector2<f64> {
        &self.translation
    }

    pub fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Spatial rigid transform, used for sensor mounts (`H_L^R`, `H_C^R`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MountSpec", into = "MountSpec")]
pub struct Transform3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Transform3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("translation has non-finite entries"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Roll-pitch-yaw (extrinsic x, y, z) plus translation.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Result<Self> {
        let r = Rotation3::from_euler_angles(roll, pitch, yaw);
        Self::new(*r.matrix(), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn compose(&self, other: &Transform3) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Maps every point through `t`, preserving order and count.
pub fn transform_points(t: &Transform3, pts: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    pts.iter().map(|p| t.apply(p)).collect()
}

/// Config-file form of a mount: translation in meters plus either a row-major
/// rotation matrix or roll/pitch/yaw in radians. Written back as a matrix so
/// that a saved config reloads bit for bit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountSpec {
    pub xyz: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rpy: Option<[f64; 3]>,
}

impl TryFrom<MountSpec> for Transform3 {
    type Error = Error;

    fn try_from(m: MountSpec) -> Result<Self> {
        let t = Vector3::from(m.xyz);
        match (m.rotation, m.rpy) {
            (Some(r), None) => Transform3::new(
                Matrix3::new(
                    r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
                ),
                t,
            ),
            (None, Some(a)) => Transform3::from_rpy(a[0], a[1], a[2], t),
            (None, None) => Transform3::new(Matrix3::identity(), t),
            (Some(_), Some(_)) => Err(Error::invalid("mount takes either rotation or rpy, not both")),
        }
    }
}

impl From<Transform3> for MountSpec {
    fn from(t: Transform3) -> Self {
        let r = &t.rotation;
        MountSpec {
            xyz: [t.translation.x, t.translation.y, t.translation.z],
            rotation: Some(std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))),
            rpy: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert_eq!(wrap_angle(PI).unwrap(), -PI);
        assert!((wrap_angle(6.0).unwrap() - (6.0 - 2.0 * PI)).abs() < 1e-15);
        assert!((wrap_angle(6.0).unwrap() + 0.2832).abs() < 1e-4);
        assert_eq!(wrap_angle(-PI).unwrap(), -PI);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn diff_examples() {
        assert_eq!(angle_diff(0.5, 0.5).unwrap(), 0.0);
        assert!((angle_diff(3.0, -3.0).unwrap() - (6.0 - 2.0 * PI)).abs() < 1e-12);
        assert_eq!(angle_diff(PI / 2.0, -PI / 2.0).unwrap(), -PI);
        assert!(angle_diff(0.0, f64::NAN).is_err());
    }

    #[test]
    fn transform_examples() {
        let pts = vec![Vector3::new(0.3, -1.0, 2.0), Vector3::new(0.0, 0.0, 0.0)];
        assert_eq!(transform_points(&Transform3::identity(), &pts), pts);

        let shift = Transform3::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(
            transform_points(&shift, &[Vector3::zeros()]),
            vec![Vector3::new(1.0, 0.0, 0.0)]
        );

        let yaw = Transform3::from_rpy(0.0, 0.0, PI / 2.0, Vector3::zeros()).unwrap();
        let out = transform_points(&yaw, &[Vector3::new(1.0, 0.0, 0.0)]);
        assert!((out[0] - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Transform3::new(m, Vector3::zeros()).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Transform3::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn pose_relative_round_trip() {
        let a = Pose2::new(1.0, -2.0, 0.7);
        let b = Pose2::new(-0.5, 0.3, -2.9);
        let rel = a.relative(&b);
        let back = a.compose(&rel);
        assert!((back.x - b.x).abs() < 1e-12);
        assert!((back.y - b.y).abs() < 1e-12);
        assert!(angle_diff(back.theta, b.theta).unwrap().abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_in_range(a in -1e4f64..1e4) {
            let w = wrap_angle(a).unwrap();
            prop_assert!((-PI..PI).contains(&w));
            prop_assert_eq!(wrap_angle(w).unwrap(), w);
            let k = ((a - w) / (2.0 * PI)).round();
            prop_assert!((a - w - k * 2.0 * PI).abs() < 1e-9);
        }

        #[test]
        fn diff_is_antisymmetric(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let d1 = angle_diff(a, b).unwrap();
            let d2 = angle_diff(b, a).unwrap();
            // ±π boundary collapses both directions onto -π
            if d1 != -PI && d2 != -PI {
                prop_assert!((d1 + d2).abs() < 1e-12);
            }
        }

        #[test]
        fn transform_inverse_round_trip(
            r in -PI..PI, p in -1.5f64..1.5, y in -PI..PI,
            tx in -5.0f64..5.0, ty in -5.0f64..5.0, tz in -5.0f64..5.0,
            pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 0..20),
        ) {
            let t = Transform3::from_rpy(r, p, y, Vector3::new(tx, ty, tz)).unwrap();
            let pts: Vec<_> = pts.into_iter().map(|(a, b, c)| Vector3::new(a, b, c)).collect();
            let back = transform_points(&t.inverse(), &transform_points(&t, &pts));
            prop_assert_eq!(back.len(), pts.len());
            for (q, p) in back.iter().zip(&pts) {
                prop_assert!((q - p).norm() < 1e-9);
            }
        }
    }
}
