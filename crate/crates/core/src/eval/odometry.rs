//! Wheel/IMU odometry emulation from a ground-truth trajectory.

use nalgebra::{Matrix6, UnitQuaternion, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::posegraph::OdometryDelta;

use super::scenario::Trajectory;

/// Smallest per-axis variance put in an emulated covariance.
const VARIANCE_FLOOR: f64 = 1e-10;

/// Velocity-model noise. Linear terms are m/s in the body frame, angular
/// terms rad/s about the body axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometryNoise {
    pub forward_sd: f64,
    pub lateral_sd: f64,
    pub vertical_sd: f64,
    pub yaw_rate_sd: f64,
    pub pitch_rate_sd: f64,
    pub roll_rate_sd: f64,
    /// Relative scale error on the translation, e.g. 0.02 reads 2% long.
    pub speed_bias: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self {
            forward_sd: 0.05,
            lateral_sd: 0.02,
            vertical_sd: 0.01,
            yaw_rate_sd: 0.002,
            pitch_rate_sd: 0.001,
            roll_rate_sd: 0.001,
            speed_bias: 0.0,
        }
    }
}

impl OdometryNoise {
    pub fn noiseless() -> Self {
        Self {
            forward_sd: 0.0,
            lateral_sd: 0.0,
            vertical_sd: 0.0,
            yaw_rate_sd: 0.0,
            pitch_rate_sd: 0.0,
            roll_rate_sd: 0.0,
            speed_bias: 0.0,
        }
    }

    /// Every standard deviation multiplied by `k`; the bias is kept.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            forward_sd: self.forward_sd * k,
            lateral_sd: self.lateral_sd * k,
            vertical_sd: self.vertical_sd * k,
            yaw_rate_sd: self.yaw_rate_sd * k,
            pitch_rate_sd: self.pitch_rate_sd * k,
            roll_rate_sd: self.roll_rate_sd * k,
            speed_bias: self.speed_bias,
        }
    }

    fn sds(&self) -> [f64; 6] {
        [
            self.forward_sd,
            self.lateral_sd,
            self.vertical_sd,
            self.roll_rate_sd,
            self.pitch_rate_sd,
            self.yaw_rate_sd,
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.sds().iter().all(|s| s.is_finite() && *s >= 0.0)
            && self.speed_bias.is_finite()
            && self.speed_bias > -1.0
        {
            Ok(())
        } else {
            Err(format!("odometry noise out of range: {self:?}"))
        }
    }
}

/// Relative motion between consecutive trajectory poses, corrupted by the
/// velocity-model noise integrated over each step. Increment ordering is
/// translation then rotation, matching the pose increment layout.
pub fn emulate_odometry(traj: &Trajectory, noise: &OdometryNoise, seed: u64) -> Vec<OdometryDelta> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sds = noise.sds();
    let normals: Vec<Normal<f64>> = sds
        .iter()
        .map(|&s| Normal::new(0.0, s).expect("validated sd"))
        .collect();
    traj.0
        .windows(2)
        .map(|w| {
            let dt = w[1].t - w[0].t;
            let truth = w[0].pose.inverse().compose(&w[1].pose);
            let n: Vec<f64> = normals.iter().map(|d| d.sample(&mut rng) * dt).collect();
            let translation =
                truth.translation * (1.0 + noise.speed_bias) + Vector3::new(n[0], n[1], n[2]);
            let rot_noise = UnitQuaternion::from_scaled_axis(Vector3::new(n[3], n[4], n[5]));
            let mut delta = truth;
            delta.translation = translation;
            delta.rotation = truth.rotation * rot_noise;
            let var =
                Vector6::from_iterator(sds.iter().map(|s| ((s * dt).powi(2)).max(VARIANCE_FLOOR)));
            OdometryDelta::new(delta, Matrix6::from_diagonal(&var))
                .expect("diagonal covariance is SPD")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::scenario::urban_trajectory;
    use crate::geometry::Pose6D;

    fn dead_reckon(start: Pose6D, deltas: &[OdometryDelta]) -> Vec<Pose6D> {
        let mut out = vec![start];
        for d in deltas {
            let next = out.last().unwrap().compose(&d.delta);
            out.push(next);
        }
        out
    }

    #[test]
    fn noiseless_deltas_equal_truth() {
        let traj = urban_trajectory(50, 8.0, 0.1);
        let deltas = emulate_odometry(&traj, &OdometryNoise::noiseless(), 9);
        assert_eq!(deltas.len(), 49);
        for (d, w) in deltas.iter().zip(traj.0.windows(2)) {
            let truth = w[0].pose.inverse().compose(&w[1].pose);
            assert_eq!(d.delta.translation, truth.translation);
            assert_eq!(d.delta.rotation, truth.rotation);
        }
    }

    #[test]
    fn same_seed_same_deltas() {
        let traj = urban_trajectory(30, 8.0, 0.1);
        let a = emulate_odometry(&traj, &OdometryNoise::default(), 4);
        let b = emulate_odometry(&traj, &OdometryNoise::default(), 4);
        let c = emulate_odometry(&traj, &OdometryNoise::default(), 5);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn covariance_is_spd_with_zero_noise() {
        let traj = urban_trajectory(3, 8.0, 0.1);
        let d = emulate_odometry(&traj, &OdometryNoise::noiseless(), 0);
        assert!(d[0].covariance.cholesky().is_some());
    }

    #[test]
    fn terminal_drift_grows_with_noise() {
        let traj = urban_trajectory(100, 8.0, 0.1);
        let end = traj.0.last().unwrap().pose;
        let mean_drift = |k: f64| {
            let noise = OdometryNoise::default().scaled(k);
            (0..100)
                .map(|s| {
                    let d = emulate_odometry(&traj, &noise, s);
                    let p = *dead_reckon(traj.0[0].pose, &d).last().unwrap();
                    (p.translation - end.translation).norm()
                })
                .sum::<f64>()
                / 100.0
        };
        let drifts: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&k| mean_drift(k))
            .collect();
        assert!(drifts.windows(2).all(|w| w[1] > w[0]), "{drifts:?}");
    }

    #[test]
    fn bias_stretches_forward_motion() {
        let traj = urban_trajectory(11, 10.0, 0.1);
        let noise = OdometryNoise {
            speed_bias: 0.02,
            ..OdometryNoise::noiseless()
        };
        let d = emulate_odometry(&traj, &noise, 0);
        let p = dead_reckon(traj.0[0].pose, &d);
        let along = p.last().unwrap().translation.x - traj.0.last().unwrap().pose.translation.x;
        assert!((along - 0.2).abs() < 1e-3, "{along}");
    }
}
