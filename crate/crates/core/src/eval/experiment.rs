//! Single-frame and sliding-window experiments over a trajectory, with
//! per-frame error records and CSV outputs.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::costmap::CostMap;
use crate::geometry::{CameraRig, Pose6D};
use crate::map::SemanticMap;
use crate::matching::AssociationTable;
use crate::perception::{
    calibration_fidelity, render_scene, NoiseProfile, PerceptionError, SceneRender,
};
use crate::posegraph::{
    slide_window, solve, FrameData, OdometryDelta, PoseGraphError, PoseGraphProblem, SolverConfig,
};

use super::metrics::{mae, rmse};
use super::odometry::emulate_odometry;
use super::pipeline::{
    frame_cost_map, observe_lights, relocalize, visible_lane_points, BorderSource,
    RelocalizationInput,
};
use super::scenario::{Ablation, ConfigError, ScenarioConfig, TimedPose, Trajectory};

/// Success thresholds for a relocalized frame.
pub const SUCCESS_LATERAL_M: f64 = 0.5;
pub const SUCCESS_YAW_DEG: f64 = 2.5;

pub const DOF_NAMES: [&str; 6] = ["lon", "lat", "z", "yaw", "pitch", "roll"];

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] PoseGraphError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed output file: {0}")]
    Format(String),
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Estimate error expressed in the true body frame: translation in meters,
/// yaw/pitch/roll in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseErrors {
    pub lon: f64,
    pub lat: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl PoseErrors {
    pub fn between(estimate: &Pose6D, truth: &Pose6D) -> Self {
        let e = truth.inverse().compose(estimate);
        let (yaw, pitch, roll) = e.yaw_pitch_roll();
        Self {
            lon: e.translation.x,
            lat: e.translation.y,
            z: e.translation.z,
            yaw: yaw.to_degrees(),
            pitch: pitch.to_degrees(),
            roll: roll.to_degrees(),
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.lon, self.lat, self.z, self.yaw, self.pitch, self.roll]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            lon: a[0],
            lat: a[1],
            z: a[2],
            yaw: a[3],
            pitch: a[4],
            roll: a[5],
        }
    }

    pub fn translation_norm(&self) -> f64 {
        Vector3::new(self.lon, self.lat, self.z).norm()
    }

    pub fn is_success(&self) -> bool {
        self.lat.abs() < SUCCESS_LATERAL_M && self.yaw.abs() < SUCCESS_YAW_DEG
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub t: f64,
    pub errors: PoseErrors,
    pub n_lb: usize,
    pub n_tl: usize,
    pub iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub rmse: [f64; 6],
    pub mae: [f64; 6],
}

impl ErrorSummary {
    pub fn of(records: &[FrameRecord]) -> Self {
        let mut out = Self {
            rmse: [f64::NAN; 6],
            mae: [f64::NAN; 6],
        };
        for i in 0..6 {
            let v: Vec<f64> = records.iter().map(|r| r.errors.as_array()[i]).collect();
            out.rmse[i] = rmse(&v);
            out.mae[i] = mae(&v);
        }
        out
    }
}

/// Success rate and mean absolute errors over successful frames, as in a
/// relocalization table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessSummary {
    pub frames: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_abs_success: [f64; 6],
}

impl SuccessSummary {
    pub fn of(records: &[FrameRecord]) -> Self {
        let ok: Vec<&FrameRecord> = records.iter().filter(|r| r.errors.is_success()).collect();
        let mut mean_abs_success = [f64::NAN; 6];
        for (i, m) in mean_abs_success.iter_mut().enumerate() {
            let v: Vec<f64> = ok.iter().map(|r| r.errors.as_array()[i]).collect();
            *m = mae(&v);
        }
        Self {
            frames: records.len(),
            successes: ok.len(),
            success_rate: if records.is_empty() {
                0.0
            } else {
                ok.len() as f64 / records.len() as f64
            },
            mean_abs_success,
        }
    }
}

/// Independent per-frame stream seed.
pub fn frame_seed(base: u64, stream: u64, frame: usize) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0xA24B_AED4_963E_E407)
        ^ (frame as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_RENDER: u64 = 1;
const STREAM_PERTURB: u64 = 2;
const STREAM_ODOMETRY: u64 = 3;

fn render_frame(
    cfg: &ScenarioConfig,
    map: &SemanticMap,
    rig: &CameraRig,
    truth: &Pose6D,
    k: usize,
) -> SceneRender {
    let noise = NoiseProfile {
        rng_seed: frame_seed(cfg.seed, STREAM_RENDER, k),
        ..cfg.noise.clone()
    };
    render_scene(map, truth, rig, &noise)
}

fn border_source(cfg: &ScenarioConfig) -> BorderSource {
    if cfg.ablated(Ablation::Uncertainty) {
        BorderSource::ClassBoundary
    } else {
        BorderSource::Uncertainty
    }
}

fn cost_map_for(cfg: &ScenarioConfig, render: &SceneRender) -> Option<Arc<CostMap>> {
    if cfg.ablated(Ablation::Borders) {
        return None;
    }
    frame_cost_map(&render.dirichlet, border_source(cfg), &cfg.perception).map(Arc::new)
}

/// Uniform perturbation of every translation axis within `±delta_t_m` and
/// every rotation axis within `±delta_r_deg`, applied in the body frame.
pub fn perturb(truth: &Pose6D, delta_t_m: f64, delta_r_deg: f64, seed: u64) -> Pose6D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |b: f64| {
        if b > 0.0 {
            rng.random_range(-b..=b)
        } else {
            0.0
        }
    };
    let t = Vector3::new(u(delta_t_m), u(delta_t_m), u(delta_t_m));
    let r = delta_r_deg.to_radians();
    let (yaw, pitch, roll) = (u(r), u(r), u(r));
    truth.compose(&Pose6D::from_xyz_ypr(t, yaw, pitch, roll))
}

/// Relocalizes every `stride`-th trajectory pose from a random perturbation
/// of the truth.
pub fn run_single_frame(
    cfg: &ScenarioConfig,
    map: &SemanticMap,
    traj: &Trajectory,
) -> Result<Vec<FrameRecord>, RunError> {
    cfg.validate()?;
    let rig = cfg.camera.rig()?;
    let solver = cfg.solver_config();
    let sf = cfg.single_frame;
    let frames: Vec<(usize, &TimedPose)> = traj.0.iter().enumerate().step_by(sf.stride).collect();
    frames
        .par_iter()
        .map(|&(k, tp)| {
            let render = render_frame(cfg, map, &rig, &tp.pose, k);
            let cost_map = cost_map_for(cfg, &render);
            let init = perturb(
                &tp.pose,
                sf.delta_t_m,
                sf.delta_r_deg,
                frame_seed(cfg.seed, STREAM_PERTURB, k),
            );
            let lights = if cfg.ablated(Ablation::Lights) {
                Vec::new()
            } else {
                observe_lights(
                    map,
                    &render.detections,
                    &init,
                    &rig,
                    &AssociationTable::new(),
                    &cfg.perception,
                )
                .1
            };
            let n_tl = lights.len();
            let input = RelocalizationInput {
                map,
                rig: &rig,
                cost_map: cost_map.clone(),
                lights,
                timestamp: tp.t,
            };
            let (estimate, iters, converged) =
                match relocalize(&input, init, &cfg.perception, &solver, sf.rounds) {
                    Ok(rep) => (rep.latest(), rep.iterations, rep.converged),
                    Err(PoseGraphError::NoConstraints | PoseGraphError::NumericalFailure) => {
                        (init, 0, false)
                    }
                    Err(e) => return Err(e.into()),
                };
            let n_lb = if cost_map.is_some() {
                visible_lane_points(map, &estimate, &rig, &cfg.perception).len()
            } else {
                0
            };
            Ok(FrameRecord {
                t: tp.t,
                errors: PoseErrors::between(&estimate, &tp.pose),
                n_lb,
                n_tl,
                iters,
                converged,
            })
        })
        .collect()
}

/// Sliding-window tracking along the trajectory from a known first pose,
/// with emulated odometry between frames.
pub fn run_sequence(
    cfg: &ScenarioConfig,
    map: &SemanticMap,
    traj: &Trajectory,
) -> Result<Vec<FrameRecord>, RunError> {
    cfg.validate()?;
    let rig = cfg.camera.rig()?;
    let solver: SolverConfig = cfg.solver_config();
    let deltas: Vec<OdometryDelta> = emulate_odometry(
        traj,
        &cfg.odometry,
        frame_seed(cfg.seed, STREAM_ODOMETRY, 0),
    );
    let use_lights = !cfg.ablated(Ablation::Lights);

    let mut problem = PoseGraphProblem::new(rig);
    let mut table = AssociationTable::new();
    let mut out = Vec::with_capacity(traj.len());
    for (k, tp) in traj.0.iter().enumerate() {
        let render = render_frame(cfg, map, &rig, &tp.pose, k);
        let cost_map = cost_map_for(cfg, &render);
        let predicted = match problem.latest() {
            Some(last) => last.compose(&deltas[k - 1].delta),
            None => tp.pose,
        };
        let lane_points = match cost_map {
            Some(_) => visible_lane_points(map, &predicted, &rig, &cfg.perception),
            None => Vec::new(),
        };
        let lights = if use_lights {
            let (next, obs) = observe_lights(
                map,
                &render.detections,
                &predicted,
                &rig,
                &table,
                &cfg.perception,
            );
            table = next;
            obs
        } else {
            Vec::new()
        };
        let (n_lb, n_tl) = (lane_points.len(), lights.len());
        let frame = FrameData {
            timestamp: tp.t,
            cost_map,
            lane_points,
            lights,
        };
        problem = if k == 0 {
            PoseGraphProblem::single(rig, tp.pose, frame)
        } else {
            slide_window(problem, frame, deltas[k - 1], solver.window_size)?
        };
        let (iters, converged) = match solve(&problem, &solver) {
            Ok(rep) => {
                problem.poses = rep.poses;
                (rep.iterations, rep.converged)
            }
            Err(PoseGraphError::NoConstraints | PoseGraphError::NumericalFailure) => (0, false),
            Err(e) => return Err(e.into()),
        };
        let estimate = *problem.latest().expect("window holds the current frame");
        out.push(FrameRecord {
            t: tp.t,
            errors: PoseErrors::between(&estimate, &tp.pose),
            n_lb,
            n_tl,
            iters,
            converged,
        });
    }
    Ok(out)
}

/// ECE of lane pixels and ENCE of light-box edges over renders at every
/// `stride`-th trajectory pose.
pub fn run_calibration(
    cfg: &ScenarioConfig,
    map: &SemanticMap,
    traj: &Trajectory,
) -> Result<(f64, f64), RunError> {
    cfg.validate()?;
    let rig = cfg.camera.rig()?;
    let renders: Vec<SceneRender> = traj
        .0
        .iter()
        .enumerate()
        .step_by(cfg.single_frame.stride)
        .map(|(k, tp)| render_frame(cfg, map, &rig, &tp.pose, k))
        .collect();
    Ok(calibration_fidelity(&renders)?)
}

/// Render of one trajectory frame with its cost map, for inspection.
pub fn debug_frame(
    cfg: &ScenarioConfig,
    map: &SemanticMap,
    traj: &Trajectory,
    k: usize,
) -> Result<(SceneRender, Option<CostMap>), RunError> {
    cfg.validate()?;
    let rig = cfg.camera.rig()?;
    let tp = traj.0.get(k).ok_or_else(|| {
        ConfigError::Invalid(format!("frame {k} outside trajectory of {}", traj.len()))
    })?;
    let render = render_frame(cfg, map, &rig, &tp.pose, k);
    let cm = frame_cost_map(&render.dirichlet, border_source(cfg), &cfg.perception);
    Ok((render, cm))
}

pub const FRAMES_HEADER: [&str; 11] = [
    "t",
    "lon",
    "lat",
    "z",
    "yaw",
    "pitch",
    "roll",
    "n_lb",
    "n_tl",
    "iters",
    "converged",
];

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_frames_csv(records: &[FrameRecord], out: impl Write) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FRAMES_HEADER).map_err(csv_err)?;
    for r in records {
        let mut row: Vec<String> = std::iter::once(r.t)
            .chain(r.errors.as_array())
            .map(fmt)
            .collect();
        row.extend([
            r.n_lb.to_string(),
            r.n_tl.to_string(),
            r.iters.to_string(),
            u8::from(r.converged).to_string(),
        ]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames_csv(text: &str) -> Result<Vec<FrameRecord>, RunError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(FRAMES_HEADER) {
        return Err(RunError::Format(format!("unexpected header {header:?}")));
    }
    let bad = |s: &str| RunError::Format(format!("bad value {s:?}"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&rec[i]));
        let n = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(&rec[i]));
        let errors = PoseErrors::from_array([f(1)?, f(2)?, f(3)?, f(4)?, f(5)?, f(6)?]);
        let converged = match &rec[10] {
            "1" => true,
            "0" => false,
            s => return Err(bad(s)),
        };
        out.push(FrameRecord {
            t: f(0)?,
            errors,
            n_lb: n(7)?,
            n_tl: n(8)?,
            iters: n(9)?,
            converged,
        });
    }
    Ok(out)
}

pub fn write_summary_csv(summary: &ErrorSummary, out: impl Write) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["metric"];
    header.extend(DOF_NAMES);
    w.write_record(&header).map_err(csv_err)?;
    for (name, vals) in [("rmse", summary.rmse), ("mae", summary.mae)] {
        let mut row = vec![name.to_string()];
        row.extend(vals.map(fmt));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(text: &str) -> Result<ErrorSummary, RunError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = ErrorSummary {
        rmse: [f64::NAN; 6],
        mae: [f64::NAN; 6],
    };
    let mut seen = [false; 2];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 7 {
            return Err(RunError::Format("summary rows need 7 fields".into()));
        }
        let mut vals = [0.0; 6];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = rec[i + 1]
                .parse()
                .map_err(|_| RunError::Format(format!("bad value {:?}", &rec[i + 1])))?;
        }
        match &rec[0] {
            "rmse" => (out.rmse, seen[0]) = (vals, true),
            "mae" => (out.mae, seen[1]) = (vals, true),
            s => return Err(RunError::Format(format!("unknown metric {s:?}"))),
        }
    }
    if seen != [true, true] {
        return Err(RunError::Format("summary needs rmse and mae rows".into()));
    }
    Ok(out)
}

pub fn write_success_csv(s: &SuccessSummary, out: impl Write) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["frames", "successes", "success_rate"];
    header.extend(&DOF_NAMES[1..]);
    w.write_record(&header).map_err(csv_err)?;
    let mut row = vec![
        s.frames.to_string(),
        s.successes.to_string(),
        fmt(s.success_rate),
    ];
    row.extend(s.mean_abs_success[1..].iter().map(|&v| fmt(v)));
    w.write_record(&row).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> RunError {
    RunError::Format(e.to_string())
}

/// Writes `frames.csv` and `summary.csv` into `dir`.
pub fn write_outputs(dir: &Path, records: &[FrameRecord]) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    write_frames_csv(records, std::fs::File::create(dir.join("frames.csv"))?)?;
    write_summary_csv(
        &ErrorSummary::of(records),
        std::fs::File::create(dir.join("summary.csv"))?,
    )?;
    Ok(())
}
