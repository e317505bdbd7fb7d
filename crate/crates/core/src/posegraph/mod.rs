//! Sliding-window pose graph over vehicle poses with lane-border cost-map
//! terms, traffic-light reprojection terms and odometry between neighbours,
//! solved by Levenberg-Marquardt with Cauchy-robustified perception terms.

mod factors;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix6, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::costmap::CostMap;
use crate::geometry::{CameraRig, Pose6D, PoseIncrement};

pub use factors::{
    cauchy, lane_border_residuals, odometry_jacobians, odometry_residual, traffic_light_residuals,
    LaneResidual, LightResidual,
};

pub const DEFAULT_WINDOW_SIZE: usize = 10;

/// Damping beyond which a rejected step ends the solve.
const MAX_DAMPING: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseGraphError {
    #[error("problem has no constraints")]
    NoConstraints,
    #[error("normal equations could not be solved")]
    NumericalFailure,
    #[error("timestamp {new} does not follow {last}")]
    NonMonotonicTimestamp { last: f64, new: f64 },
    #[error("odometry covariance is not symmetric positive definite")]
    InvalidCovariance,
    #[error("malformed problem: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryDelta {
    /// Body `k` to body `k+1`.
    pub delta: Pose6D,
    pub covariance: Matrix6<f64>,
    information: Matrix6<f64>,
}

impl OdometryDelta {
    pub fn new(delta: Pose6D, covariance: Matrix6<f64>) -> Result<Self, PoseGraphError> {
        let sym =
            (covariance - covariance.transpose()).norm() <= 1e-12 * covariance.norm().max(1.0);
        let chol = covariance
            .cholesky()
            .ok_or(PoseGraphError::InvalidCovariance)?;
        if !sym {
            return Err(PoseGraphError::InvalidCovariance);
        }
        Ok(Self {
            delta,
            covariance,
            information: chol.inverse(),
        })
    }

    pub fn information(&self) -> Matrix6<f64> {
        self.information
    }
}

/// A matched traffic light: map position, detected box center and the
/// variance of that center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightObservation {
    pub position: Vector3<f64>,
    pub center: Vector2<f64>,
    pub variance: Vector2<f64>,
}

/// Unary observations attached to one pose.
#[derive(Debug, Clone, Default)]
pub struct FrameData {
    pub timestamp: f64,
    pub cost_map: Option<Arc<CostMap>>,
    pub lane_points: Vec<Vector3<f64>>,
    pub lights: Vec<LightObservation>,
}

impl FrameData {
    fn has_constraints(&self) -> bool {
        (self.cost_map.is_some() && !self.lane_points.is_empty()) || !self.lights.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    /// Cost of a lane point that cannot be sampled; `None` uses the image
    /// diagonal.
    pub out_of_image_cost: Option<f64>,
    pub window_size: usize,
    /// Apply the Cauchy kernel to perception terms.
    pub robust: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 0.5,
            step_tolerance: 1e-6,
            cost_tolerance: 1e-9,
            out_of_image_cost: None,
            window_size: DEFAULT_WINDOW_SIZE,
            robust: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), PoseGraphError> {
        let ok = self.max_iterations > 0
            && self.initial_damping > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 0.0
            && self.damping_down < 1.0
            && self.step_tolerance > 0.0
            && self.cost_tolerance > 0.0
            && self.window_size >= 1
            && self.out_of_image_cost.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(PoseGraphError::Malformed("invalid solver configuration"))
        }
    }

    fn out_of_image(&self, rig: &CameraRig) -> f64 {
        self.out_of_image_cost
            .unwrap_or_else(|| rig.intrinsics.diagonal())
    }

    fn kernel(&self, x: f64) -> (f64, f64) {
        if self.robust {
            cauchy(x)
        } else {
            (x, 1.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoseGraphProblem {
    pub rig: CameraRig,
    pub poses: Vec<Pose6D>,
    pub frames: Vec<FrameData>,
    /// `odometry[k]` links `poses[k]` and `poses[k + 1]`.
    pub odometry: Vec<OdometryDelta>,
}

impl PoseGraphProblem {
    pub fn new(rig: CameraRig) -> Self {
        Self {
            rig,
            poses: Vec::new(),
            frames: Vec::new(),
            odometry: Vec::new(),
        }
    }

    /// Single pose with its observations and no odometry.
    pub fn single(rig: CameraRig, pose: Pose6D, frame: FrameData) -> Self {
        Self {
            rig,
            poses: vec![pose],
            frames: vec![frame],
            odometry: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn latest(&self) -> Option<&Pose6D> {
        self.poses.last()
    }

    pub fn validate(&self) -> Result<(), PoseGraphError> {
        if self.frames.len() != self.poses.len() {
            return Err(PoseGraphError::Malformed("one frame per pose required"));
        }
        if !self.poses.is_empty() && self.odometry.len() + 1 != self.poses.len() {
            return Err(PoseGraphError::Malformed(
                "one odometry delta between consecutive poses required",
            ));
        }
        for w in self.frames.windows(2) {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(PoseGraphError::NonMonotonicTimestamp {
                    last: w[0].timestamp,
                    new: w[1].timestamp,
                });
            }
        }
        Ok(())
    }

    fn has_unary(&self) -> bool {
        self.frames.iter().any(FrameData::has_constraints)
    }

    /// Total robustified cost at `poses`.
    pub fn cost(&self, poses: &[Pose6D], cfg: &SolverConfig) -> f64 {
        let ooi = cfg.out_of_image(&self.rig);
        let mut total = 0.0;
        for (pose, frame) in poses.iter().zip(&self.frames) {
            if let Some(cm) = &frame.cost_map {
                for r in lane_border_residuals(pose, cm, &frame.lane_points, &self.rig, ooi) {
                    total += cfg.kernel(r.information * r.residual * r.residual).0;
                }
            }
            for r in traffic_light_residuals(pose, &frame.lights, &self.rig) {
                total += cfg
                    .kernel((r.residual.transpose() * r.information * r.residual)[0])
                    .0;
            }
        }
        for (k, delta) in self.odometry.iter().enumerate() {
            let (r, info) = odometry_residual(&poses[k], &poses[k + 1], delta);
            total += (r.transpose() * info * r)[0];
        }
        total
    }

    /// Gauss-Newton system `(H, g)` with IRLS weights from the kernel.
    fn linearize(&self, poses: &[Pose6D], cfg: &SolverConfig) -> (DMatrix<f64>, DVector<f64>) {
        let n = poses.len();
        let ooi = cfg.out_of_image(&self.rig);
        let mut h = DMatrix::zeros(6 * n, 6 * n);
        let mut g = DVector::zeros(6 * n);
        for (k, (pose, frame)) in poses.iter().zip(&self.frames).enumerate() {
            let mut hk = Matrix6::zeros();
            let mut gk = Vector6::zeros();
            if let Some(cm) = &frame.cost_map {
                for r in lane_border_residuals(pose, cm, &frame.lane_points, &self.rig, ooi) {
                    let w = cfg.kernel(r.information * r.residual * r.residual).1 * r.information;
                    let jt = r.jacobian.transpose();
                    hk += w * jt * r.jacobian;
                    gk += w * r.residual * jt;
                }
            }
            for r in traffic_light_residuals(pose, &frame.lights, &self.rig) {
                let x = (r.residual.transpose() * r.information * r.residual)[0];
                let wi = cfg.kernel(x).1 * r.information;
                let jt = r.jacobian.transpose();
                hk += jt * wi * r.jacobian;
                gk += jt * wi * r.residual;
            }
            add_block(&mut h, 6 * k, 6 * k, &hk);
            add_rows(&mut g, 6 * k, &gk);
        }
        for (k, delta) in self.odometry.iter().enumerate() {
            let (r, info) = odometry_residual(&poses[k], &poses[k + 1], delta);
            let (ja, jb) = odometry_jacobians(&poses[k], &poses[k + 1], delta);
            let (a, b) = (6 * k, 6 * (k + 1));
            let ja_i = ja.transpose() * info;
            let jb_i = jb.transpose() * info;
            add_block(&mut h, a, a, &(ja_i * ja));
            add_block(&mut h, a, b, &(ja_i * jb));
            add_block(&mut h, b, a, &(jb_i * ja));
            add_block(&mut h, b, b, &(jb_i * jb));
            add_rows(&mut g, a, &(ja_i * r));
            add_rows(&mut g, b, &(jb_i * r));
        }
        (h, g)
    }
}

fn add_block(h: &mut DMatrix<f64>, row: usize, col: usize, m: &Matrix6<f64>) {
    let mut v = h.fixed_view_mut::<6, 6>(row, col);
    v += m;
}

fn add_rows(g: &mut DVector<f64>, row: usize, v: &Vector6<f64>) {
    let mut r = g.fixed_rows_mut::<6>(row);
    r += v;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub poses: Vec<Pose6D>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SolveReport {
    /// The most recent pose of the window.
    pub fn latest(&self) -> Pose6D {
        *self.poses.last().expect("nonempty window")
    }
}

/// Levenberg-Marquardt over right increments of every pose. The first pose
/// is held fixed when no pose carries a perception constraint.
pub fn solve(
    problem: &PoseGraphProblem,
    cfg: &SolverConfig,
) -> Result<SolveReport, PoseGraphError> {
    problem.validate()?;
    cfg.validate()?;
    let unary = problem.has_unary();
    if problem.is_empty() || (!unary && problem.odometry.is_empty()) {
        return Err(PoseGraphError::NoConstraints);
    }
    let first_free = usize::from(!unary);
    let n = problem.len();
    let dim = 6 * (n - first_free);

    let mut poses = problem.poses.clone();
    let mut cost = problem.cost(&poses, cfg);
    let initial_cost = cost;
    if !cost.is_finite() {
        return Err(PoseGraphError::NumericalFailure);
    }
    let mut lambda = cfg.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations && !converged {
        iterations += 1;
        let (h_full, g_full) = problem.linearize(&poses, cfg);
        let off = 6 * first_free;
        let h = h_full.view((off, off), (dim, dim)).into_owned();
        let g = g_full.rows(off, dim).into_owned();
        if !h.iter().chain(g.iter()).all(|v| v.is_finite()) {
            return Err(PoseGraphError::NumericalFailure);
        }
        let max_diag = h.diagonal().max().max(1e-12);
        let diag = h.diagonal().map(|d| d.max(1e-9 * max_diag));

        loop {
            let mut a = h.clone();
            for i in 0..dim {
                a[(i, i)] += lambda * diag[i];
            }
            let Some(chol) = a.cholesky() else {
                lambda *= cfg.damping_up;
                if lambda > MAX_DAMPING {
                    return Err(PoseGraphError::NumericalFailure);
                }
                continue;
            };
            let step = chol.solve(&(-&g));
            if !step.iter().all(|v| v.is_finite()) {
                return Err(PoseGraphError::NumericalFailure);
            }
            let mut trial = poses.clone();
            for (k, pose) in trial.iter_mut().enumerate().skip(first_free) {
                let i = 6 * (k - first_free);
                let delta: PoseIncrement = step.fixed_rows::<6>(i).into_owned();
                *pose = pose.boxplus(&delta);
            }
            let trial_cost = problem.cost(&trial, cfg);
            if trial_cost <= cost {
                let decrease = cost - trial_cost;
                poses = trial;
                let old = cost;
                cost = trial_cost;
                lambda *= cfg.damping_down;
                if step.norm() < cfg.step_tolerance || decrease <= cfg.cost_tolerance * old {
                    converged = true;
                }
                break;
            }
            lambda *= cfg.damping_up;
            if lambda > MAX_DAMPING {
                // No descent direction left at any damping: stationary.
                converged = true;
                break;
            }
        }
    }

    Ok(SolveReport {
        poses,
        initial_cost,
        final_cost: cost,
        iterations,
        converged,
    })
}

/// Appends a frame, initialized by composing the last estimate with the
/// odometry delta, and drops the oldest pose once the window exceeds
/// `window_size`. Information carried by dropped poses is discarded.
pub fn slide_window(
    mut problem: PoseGraphProblem,
    frame: FrameData,
    delta: OdometryDelta,
    window_size: usize,
) -> Result<PoseGraphProblem, PoseGraphError> {
    if let Some(last) = problem.frames.last() {
        if !(frame.timestamp > last.timestamp) {
            return Err(PoseGraphError::NonMonotonicTimestamp {
                last: last.timestamp,
                new: frame.timestamp,
            });
        }
    }
    let Some(&last) = problem.poses.last() else {
        return Err(PoseGraphError::Malformed("window has no pose to extend"));
    };
    problem.poses.push(last.compose(&delta.delta));
    problem.frames.push(frame);
    problem.odometry.push(delta);
    while problem.poses.len() > window_size.max(1) {
        problem.poses.remove(0);
        problem.frames.remove(0);
        problem.odometry.remove(0);
    }
    Ok(problem)
}

/// Solve with a single pose and no odometry.
pub fn localize_single_frame(
    rig: &CameraRig,
    frame: FrameData,
    init: Pose6D,
    cfg: &SolverConfig,
) -> Result<SolveReport, PoseGraphError> {
    solve(&PoseGraphProblem::single(*rig, init, frame), cfg)
}
