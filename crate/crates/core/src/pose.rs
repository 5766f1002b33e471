//! Rigid body poses.

use std::ops::Mul;

use nalgebra::{Matrix3, Point3 as NPoint3, Quaternion, UnitQuaternion, Vector3, Vector6};

/// A rigid transform in SE(3): unit quaternion rotation followed by translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from raw quaternion components, normalizing them.
    pub fn from_components(qw: f64, qx: f64, qy: f64, qz: f64, t: [f64; 3]) -> Self {
        Self {
            rotation: UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz)),
            translation: Vector3::new(t[0], t[1], t[2]),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Planar pose: yaw about +z, translation in the xy plane.
    pub fn from_planar(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation: Vector3::new(x, y, 0.0),
        }
    }

    pub fn from_scaled_axis(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::from_scaled_axis(axis_angle),
            translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        // products drift off the unit sphere, and chained odometry amplifies it
        let mut rotation = self.rotation * other.rotation;
        rotation.renormalize();
        Self {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_point3(&self, p: &NPoint3<f64>) -> NPoint3<f64> {
        NPoint3::from(self.transform_point(&p.coords))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// Rotation angle in radians, in [0, π].
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Heading of the rotated x axis projected onto the xy plane.
    pub fn yaw(&self) -> f64 {
        let q = self.rotation.quaternion();
        let (w, x, y, z) = (q.w, q.i, q.j, q.k);
        (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
    }

    /// (x, y, yaw) of the planar projection.
    pub fn planar(&self) -> (f64, f64, f64) {
        (self.translation.x, self.translation.y, self.yaw())
    }

    /// Left-multiplicative update `exp(delta) ∘ self`, with `delta = (ω, v)`.
    ///
    /// The rotation part is the exact SO(3) exponential; the translation part
    /// is added after rotating the current translation, which is a retraction
    /// whose first-order behavior matches the SE(3) exponential.
    pub fn retract_left(&self, delta: &Vector6<f64>) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let dr = UnitQuaternion::from_scaled_axis(omega);
        let mut rotation = dr * self.rotation;
        rotation.renormalize();
        Self {
            rotation,
            translation: dr * self.translation + v,
        }
    }

    pub fn is_finite(&self) -> bool {
        let q = self.rotation.quaternion();
        q.coords.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }

    /// Translation distance and rotation angle between two poses.
    pub fn distance_to(&self, other: &PoseSE3) -> (f64, f64) {
        let rel = self.inverse().compose(other);
        (
            (self.translation - other.translation).norm(),
            rel.rotation_angle(),
        )
    }
}

impl Mul for PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

impl Mul<&PoseSE3> for &PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: &PoseSE3) -> PoseSE3 {
        self.compose(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn chained_odometry_stays_unit() {
        let step = PoseSE3::from_scaled_axis(Vector3::new(0.001, -0.002, 0.087), Vector3::new(0.3, 0.01, 0.0));
        let (mut prev, mut pose) = (PoseSE3::identity(), step);
        for _ in 0..500 {
            let velocity = prev.inverse().compose(&pose);
            prev = pose;
            pose = pose.compose(&velocity);
        }
        assert!((pose.rotation.quaternion().norm() - 1.0).abs() < 1e-12);
    }

    fn arb_pose() -> impl Strategy<Value = PoseSE3> {
        (
            prop::array::uniform3(-3.0f64..3.0),
            prop::array::uniform3(-10.0f64..10.0),
        )
            .prop_map(|(w, t)| {
                PoseSE3::from_scaled_axis(Vector3::from(w), Vector3::from(t))
            })
    }

    fn close(a: &PoseSE3, b: &PoseSE3, tol: f64) -> bool {
        (a.translation - b.translation).norm() < tol && a.rotation.angle_to(&b.rotation) < tol
    }

    #[test]
    fn planar_yaw_round_trip() {
        let p = PoseSE3::from_planar(1.0, -2.0, 2.5);
        let (x, y, yaw) = p.planar();
        assert!((x - 1.0).abs() < 1e-12 && (y + 2.0).abs() < 1e-12);
        assert!((yaw - 2.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn group_laws(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let id = PoseSE3::identity();
            prop_assert!(close(&(a * a.inverse()), &id, 1e-9));
            prop_assert!(close(&(a * id), &a, 1e-9));
            prop_assert!(close(&((a * b) * c), &(a * (b * c)), 1e-9));
            prop_assert!((a.rotation.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn retraction_agrees_with_composition(a in arb_pose(), w in prop::array::uniform3(-0.5f64..0.5)) {
            let delta = Vector6::new(w[0], w[1], w[2], 0.1, -0.2, 0.3);
            let step = PoseSE3::new(
                UnitQuaternion::from_scaled_axis(Vector3::from(w)),
                Vector3::new(0.1, -0.2, 0.3),
            );
            prop_assert!(close(&a.retract_left(&delta), &(step * a), 1e-9));
        }
    }
}
