//! Residuals and analytic Jacobians of the lane-border, traffic-light and
//! odometry terms. Jacobians are taken with respect to right increments.

use nalgebra::{Matrix2, Matrix2x6, Matrix6, RowVector6, Vector2, Vector3, Vector6};

use crate::costmap::CostMap;
use crate::geometry::{skew, so3_right_jacobian_inv, CameraRig, Pose6D};

use super::{LightObservation, OdometryDelta};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneResidual {
    pub residual: f64,
    pub information: f64,
    pub jacobian: RowVector6<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightResidual {
    pub residual: Vector2<f64>,
    pub information: Matrix2<f64>,
    pub jacobian: Matrix2x6<f64>,
}

/// Cost-map value at the projection of each lane point. Points that fall
/// behind the camera or outside the sampling domain yield
/// `out_of_image_cost` with a zero Jacobian.
pub fn lane_border_residuals(
    pose: &Pose6D,
    cm: &CostMap,
    lane_points: &[Vector3<f64>],
    rig: &CameraRig,
    out_of_image_cost: f64,
) -> Vec<LaneResidual> {
    lane_points
        .iter()
        .map(|x| {
            let outside = LaneResidual {
                residual: out_of_image_cost,
                information: 1.0,
                jacobian: RowVector6::zeros(),
            };
            let Ok((uv, j_uv)) = rig.project_world_with_jacobian(pose, x) else {
                return outside;
            };
            let Ok((value, grad)) = cm.sample(&uv) else {
                return outside;
            };
            LaneResidual {
                residual: value,
                information: cm.confidence_at(&uv).powi(2),
                jacobian: grad.transpose() * j_uv,
            }
        })
        .collect()
}

/// `center − f_cam(p⁻¹ X)` per matched light; lights behind the camera
/// are skipped.
pub fn traffic_light_residuals(
    pose: &Pose6D,
    matches: &[LightObservation],
    rig: &CameraRig,
) -> Vec<LightResidual> {
    matches
        .iter()
        .filter_map(|m| {
            let (uv, j_uv) = rig.project_world_with_jacobian(pose, &m.position).ok()?;
            Some(LightResidual {
                residual: m.center - uv,
                information: Matrix2::from_diagonal(&m.variance.map(|v| 1.0 / v)),
                jacobian: -j_uv,
            })
        })
        .collect()
}

/// Residual `Log(Δ⁻¹ p_k⁻¹ p_{k+1})` and the information matrix of `delta`.
pub fn odometry_residual(
    p_k: &Pose6D,
    p_k1: &Pose6D,
    delta: &OdometryDelta,
) -> (Vector6<f64>, Matrix6<f64>) {
    (
        p_k.inverse().compose(p_k1).boxminus(&delta.delta),
        delta.information(),
    )
}

/// Jacobians of [`odometry_residual`] with respect to right increments on
/// `p_k` and `p_{k+1}`.
pub fn odometry_jacobians(
    p_k: &Pose6D,
    p_k1: &Pose6D,
    delta: &OdometryDelta,
) -> (Matrix6<f64>, Matrix6<f64>) {
    let err = delta.delta.inverse().compose(&p_k.inverse().compose(p_k1));
    let phi = err.rotation.scaled_axis();
    let jr_inv = so3_right_jacobian_inv(&phi);
    let r_delta_t = delta.delta.rotation_matrix().transpose();
    let r_err = err.rotation_matrix();
    let d = p_k.rotation_matrix().transpose() * (p_k1.translation - p_k.translation);

    let mut j_k = Matrix6::zeros();
    j_k.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-r_delta_t));
    j_k.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(r_delta_t * skew(&d)));
    j_k.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(-jr_inv * r_err.transpose() * r_delta_t));

    let mut j_k1 = Matrix6::zeros();
    j_k1.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_err);
    j_k1.fixed_view_mut::<3, 3>(3, 3).copy_from(&jr_inv);
    (j_k, j_k1)
}

/// Cauchy kernel `ρ(x) = ln(1 + x)` and its derivative.
pub fn cauchy(x: f64) -> (f64, f64) {
    (x.ln_1p(), 1.0 / (1.0 + x))
}
