//! Rigid-body poses, the pinhole camera and their derivatives.
//!
//! Frame conventions:
//! - world: fixed ENU-style frame (x east, y north, z up)
//! - vehicle body: x forward, y left, z up
//! - camera: x right, y down, z forward (optical axis)
//!
//! A [`Pose6D`] maps points from its local frame into the parent frame
//! (`world_from_body`). Solver increments are applied on the right:
//! `boxplus(p, δ) = p ∘ Exp(δ)` where `Exp(δ)` is the rigid transform with
//! rotation `exp(δθ)` and translation `δt`.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x6, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points with camera-frame depth at or below this value are culled.
pub const Z_MIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth} <= {Z_MIN})")]
    BehindCamera { depth: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// 6-vector increment `(δt, δθ)`: translation in meters, rotation as an
/// axis-angle vector in radians.
pub type PoseIncrement = Vector6<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6D {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose6D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6D {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Pose from position and intrinsic Z-Y-X (yaw, pitch, roll) angles in radians.
    pub fn from_xyz_ypr(position: Vector3<f64>, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::new(
            position,
            UnitQuaternion::from_euler_angles(roll, pitch, yaw),
        )
    }

    /// Quaternion components `(w, x, y, z)`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn from_quaternion_wxyz(translation: Vector3<f64>, wxyz: [f64; 4]) -> Self {
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        Self::new(translation, UnitQuaternion::from_quaternion(q))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `(yaw, pitch, roll)` in radians for the Z-Y-X convention.
    pub fn yaw_pitch_roll(&self) -> (f64, f64, f64) {
        let (roll, pitch, yaw) = self.rotation.euler_angles();
        (yaw, pitch, roll)
    }

    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        Pose6D {
            translation: self.translation + self.rotation * other.translation,
            rotation: renormalize(self.rotation * other.rotation),
        }
    }

    pub fn inverse(&self) -> Pose6D {
        let rot_inv = self.rotation.inverse();
        Pose6D {
            translation: -(rot_inv * self.translation),
            rotation: rot_inv,
        }
    }

    /// Maps a point from the local frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a point from the parent frame into the local frame (`p⁻¹ X`).
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn boxplus(&self, delta: &PoseIncrement) -> Pose6D {
        self.compose(&exp_increment(delta))
    }

    /// Local coordinates of `self` relative to `base`: `Log(base⁻¹ ∘ self)`.
    pub fn boxminus(&self, base: &Pose6D) -> PoseIncrement {
        log_pose(&base.inverse().compose(self))
    }

    /// Rotation angle of this pose's rotation, radians in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let mut q = q;
    q.renormalize_fast();
    q
}

/// Rigid transform with rotation `exp(δθ)` and translation `δt`.
pub fn exp_increment(delta: &PoseIncrement) -> Pose6D {
    let t = Vector3::new(delta[0], delta[1], delta[2]);
    let w = Vector3::new(delta[3], delta[4], delta[5]);
    Pose6D::new(t, UnitQuaternion::from_scaled_axis(w))
}

/// Inverse of [`exp_increment`].
pub fn log_pose(p: &Pose6D) -> PoseIncrement {
    let w = p.rotation.scaled_axis();
    Vector6::new(
        p.translation.x,
        p.translation.y,
        p.translation.z,
        w.x,
        w.y,
        w.z,
    )
}

pub fn compose(a: &Pose6D, b: &Pose6D) -> Pose6D {
    a.compose(b)
}

pub fn boxplus(p: &Pose6D, delta: &PoseIncrement) -> Pose6D {
    p.boxplus(delta)
}

pub fn boxminus(a: &Pose6D, b: &Pose6D) -> PoseIncrement {
    a.boxminus(b)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the right Jacobian of SO(3) at `phi`.
pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let coeff = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coeff * k * k
}

/// Jacobian of `p⁻¹ X` with respect to a right increment on `p`, evaluated at
/// `local = p⁻¹ X`.
pub fn inverse_transform_jacobian(local: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-Matrix3::identity()));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(local));
    j
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(
                "focal lengths must be positive",
            ));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics("cx outside image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("cy outside image"));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    /// True when pixel coordinates fall inside the image, with an optional
    /// margin (pixels) kept clear of every edge.
    pub fn contains(&self, uv: &Vector2<f64>, margin: f64) -> bool {
        uv.x >= margin
            && uv.y >= margin
            && uv.x <= self.width as f64 - 1.0 - margin
            && uv.y <= self.height as f64 - 1.0 - margin
    }

    pub fn project(&self, x_cam: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        project(self, x_cam)
    }
}

/// Pinhole projection. Pixel centers sit at integer coordinates.
pub fn project(
    cam: &CameraIntrinsics,
    x_cam: &Vector3<f64>,
) -> Result<Vector2<f64>, GeometryError> {
    if x_cam.z <= Z_MIN {
        return Err(GeometryError::BehindCamera { depth: x_cam.z });
    }
    Ok(Vector2::new(
        cam.fx * x_cam.x / x_cam.z + cam.cx,
        cam.fy * x_cam.y / x_cam.z + cam.cy,
    ))
}

pub fn project_jacobian(
    cam: &CameraIntrinsics,
    x_cam: &Vector3<f64>,
) -> Result<Matrix2x3<f64>, GeometryError> {
    if x_cam.z <= Z_MIN {
        return Err(GeometryError::BehindCamera { depth: x_cam.z });
    }
    let iz = 1.0 / x_cam.z;
    let iz2 = iz * iz;
    Ok(Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * x_cam.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * x_cam.y * iz2,
    ))
}

/// Camera intrinsics plus the fixed mounting of the camera on the vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics,
    /// `body_from_camera`.
    pub mount: Pose6D,
}

impl CameraRig {
    /// Camera at `height` meters above the body origin, looking forward and
    /// pitched down by `pitch_down` radians.
    pub fn forward_looking(intrinsics: CameraIntrinsics, height: f64, pitch_down: f64) -> Self {
        // Columns are the camera axes expressed in the body frame.
        let base = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let base = UnitQuaternion::from_matrix(&base);
        let tilt = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), pitch_down);
        Self {
            intrinsics,
            mount: Pose6D::new(Vector3::new(0.0, 0.0, height), tilt * base),
        }
    }

    pub fn camera_pose(&self, vehicle: &Pose6D) -> Pose6D {
        vehicle.compose(&self.mount)
    }

    /// World point into the camera frame of a vehicle at `vehicle`.
    pub fn world_to_camera(&self, vehicle: &Pose6D, x_world: &Vector3<f64>) -> Vector3<f64> {
        let body = vehicle.inverse_transform_point(x_world);
        self.mount.inverse_transform_point(&body)
    }

    pub fn project_world(
        &self,
        vehicle: &Pose6D,
        x_world: &Vector3<f64>,
    ) -> Result<Vector2<f64>, GeometryError> {
        project(&self.intrinsics, &self.world_to_camera(vehicle, x_world))
    }

    /// Projection of a world point and its 2×6 Jacobian with respect to a
    /// right increment on the vehicle pose.
    pub fn project_world_with_jacobian(
        &self,
        vehicle: &Pose6D,
        x_world: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, nalgebra::Matrix2x6<f64>), GeometryError> {
        let body = vehicle.inverse_transform_point(x_world);
        let x_cam = self.mount.inverse_transform_point(&body);
        let uv = project(&self.intrinsics, &x_cam)?;
        let j_proj = project_jacobian(&self.intrinsics, &x_cam)?;
        let r_cb = self.mount.rotation_matrix().transpose();
        let j = j_proj * r_cb * inverse_transform_jacobian(&body);
        Ok((uv, j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0, 128, 128).unwrap()
    }

    fn random_pose(rng: &mut impl Rng) -> Pose6D {
        let t = Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let w = axis.normalize() * rng.random_range(0.0..3.0);
        Pose6D::new(t, UnitQuaternion::from_scaled_axis(w))
    }

    fn pose_distance(a: &Pose6D, b: &Pose6D) -> (f64, f64) {
        let d = a.inverse().compose(b);
        (d.translation.norm(), d.rotation_angle())
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let q = Pose6D::identity().compose(&p);
            assert_eq!(q.translation, p.translation);
            let e = p.compose(&p.inverse());
            assert!(e.translation.norm() < 1e-9);
            assert!(e.rotation_angle() < 1e-9);
            assert!((e.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pure_translations_commute() {
        let c = Pose6D::from_translation(1.0, 0.0, 0.0)
            .compose(&Pose6D::from_translation(0.0, 2.0, 0.0));
        assert_eq!(c.translation, Vector3::new(1.0, 2.0, 0.0));
        assert!(c.rotation_angle() < 1e-15);
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            let (dt, dr) = pose_distance(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)));
            assert!(dt < 1e-9 && dr < 1e-9);
        }
    }

    #[test]
    fn boxplus_zero_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_pose(&mut rng);
        let q = p.boxplus(&PoseIncrement::zeros());
        let (dt, dr) = pose_distance(&p, &q);
        assert!(dt < 1e-12 && dr < 1e-12);
        let q = Pose6D::identity().boxplus(&PoseIncrement::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(q.translation, Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn boxminus_inverts_boxplus_locally() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let p = random_pose(&mut rng);
            let mut d = PoseIncrement::from_fn(|_, _| rng.random_range(-1.0..1.0));
            d *= rng.random_range(0.0..0.1) / d.norm();
            let back = p.boxplus(&d).boxminus(&p);
            assert!((back - d).norm() < 1e-9, "{back} vs {d}");
        }
    }

    #[test]
    fn projection_examples() {
        let cam = cam100();
        assert_eq!(
            project(&cam, &Vector3::new(0.0, 0.0, 10.0)).unwrap(),
            Vector2::new(64.0, 64.0)
        );
        assert_eq!(
            project(&cam, &Vector3::new(1.0, 0.0, 10.0)).unwrap(),
            Vector2::new(74.0, 64.0)
        );
        assert!(matches!(
            project(&cam, &Vector3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera { .. })
        ));
        assert!(project(&cam, &Vector3::new(0.0, 0.0, Z_MIN)).is_err());
    }

    #[test]
    fn projection_jacobian_closed_forms() {
        let cam = cam100();
        let j = project_jacobian(&cam, &Vector3::new(0.0, 0.0, 10.0)).unwrap();
        assert_eq!(j[(0, 0)], 10.0);
        assert_eq!(j[(0, 2)], 0.0);
        let j = project_jacobian(&cam, &Vector3::new(1.0, 1.0, 10.0)).unwrap();
        assert!((j[(0, 2)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn projection_jacobian_matches_central_differences() {
        let cam = cam100();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..1000 {
            let x = Vector3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(2.0..50.0),
            );
            let j = project_jacobian(&cam, &x).unwrap();
            let mut num = Matrix2x3::zeros();
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let d = (project(&cam, &xp).unwrap() - project(&cam, &xm).unwrap()) / (2.0 * h);
                num.set_column(k, &d);
            }
            let rel = (j - num).norm() / num.norm().max(1.0);
            assert!(rel < 1e-6, "rel {rel}");
        }
    }

    #[test]
    fn rig_axes_follow_convention() {
        let cam = cam100();
        let rig = CameraRig::forward_looking(cam, 1.5, 0.0);
        // A point straight ahead of the vehicle at camera height lands on the principal point.
        let uv = rig
            .project_world(&Pose6D::identity(), &Vector3::new(10.0, 0.0, 1.5))
            .unwrap();
        assert!((uv - Vector2::new(64.0, 64.0)).norm() < 1e-12);
        // Left of the vehicle appears left in the image, up appears up.
        let uv = rig
            .project_world(&Pose6D::identity(), &Vector3::new(10.0, 1.0, 2.5))
            .unwrap();
        assert!(uv.x < 64.0 && uv.y < 64.0);
    }

    #[test]
    fn rig_jacobian_matches_central_differences() {
        let cam = cam100();
        let rig = CameraRig::forward_looking(cam, 1.5, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-6;
        for _ in 0..200 {
            let vehicle = Pose6D::from_xyz_ypr(
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    0.0,
                ),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            );
            let local = Vector3::new(
                rng.random_range(5.0..40.0),
                rng.random_range(-8.0..8.0),
                rng.random_range(-1.0..5.0),
            );
            let xw = vehicle.transform_point(&local);
            let (_, j) = rig.project_world_with_jacobian(&vehicle, &xw).unwrap();
            let mut num = nalgebra::Matrix2x6::zeros();
            for k in 0..6 {
                let mut d = PoseIncrement::zeros();
                d[k] = h;
                let up = rig.project_world(&vehicle.boxplus(&d), &xw).unwrap();
                let um = rig.project_world(&vehicle.boxplus(&(-d)), &xw).unwrap();
                num.set_column(k, &((up - um) / (2.0 * h)));
            }
            let rel = (j - num).norm() / num.norm().max(1.0);
            assert!(rel < 1e-6, "rel {rel}");
        }
    }

    #[test]
    fn right_jacobian_inverse_matches_log_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..200 {
            let phi = Vector3::new(
                rng.random_range(-1.4..1.4),
                rng.random_range(-1.4..1.4),
                rng.random_range(-1.4..1.4),
            );
            let r = UnitQuaternion::from_scaled_axis(phi);
            let jinv = so3_right_jacobian_inv(&phi);
            for k in 0..3 {
                let mut d = Vector3::zeros();
                d[k] = h;
                let p = (r * UnitQuaternion::from_scaled_axis(d)).scaled_axis();
                let m = (r * UnitQuaternion::from_scaled_axis(-d)).scaled_axis();
                let col = (p - m) / (2.0 * h);
                assert!((col - jinv.column(k)).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).is_ok());
    }

    proptest! {
        #[test]
        fn quaternion_stays_unit_under_updates(
            steps in proptest::collection::vec(proptest::array::uniform6(-0.3f64..0.3), 1..50)
        ) {
            let mut p = Pose6D::identity();
            for s in steps {
                p = p.boxplus(&PoseIncrement::from_column_slice(&s));
                prop_assert!((p.rotation.quaternion().norm() - 1.0).abs() < 1e-9);
            }
        }
    }
}
