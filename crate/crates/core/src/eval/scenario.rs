//! Scenario configuration files, trajectories and built-in synthetic scenes.

use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, CameraRig, Pose6D};
use crate::map::{LaneBorder, MapError, SemanticMap, TrafficLight};
use crate::perception::NoiseProfile;
use crate::posegraph::SolverConfig;

use super::odometry::OdometryNoise;
use super::pipeline::PerceptionSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentMode {
    SlidingWindow,
    SingleFrame,
}

/// Perception or solver component switched off for an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Borders from the class map only, no probability weighting.
    Uncertainty,
    /// Quadratic instead of Cauchy-robustified perception terms.
    Cauchy,
    Lights,
    Borders,
}

impl Ablation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uncertainty" => Some(Self::Uncertainty),
            "cauchy" => Some(Self::Cauchy),
            "lights" => Some(Self::Lights),
            "borders" => Some(Self::Borders),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Uncertainty => "uncertainty",
            Self::Cauchy => "cauchy",
            Self::Lights => "lights",
            Self::Borders => "borders",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera height above the body origin, meters.
    #[serde(default = "default_mount_height")]
    pub mount_height: f64,
    /// Downward tilt of the optical axis, degrees.
    #[serde(default)]
    pub pitch_down_deg: f64,
}

fn default_mount_height() -> f64 {
    1.5
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 260.0,
            fy: 260.0,
            cx: 160.0,
            cy: 120.0,
            width: 320,
            height: 240,
            mount_height: 1.5,
            pitch_down_deg: 0.0,
        }
    }
}

impl CameraConfig {
    pub fn rig(&self) -> Result<CameraRig, ConfigError> {
        let k = CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(CameraRig::forward_looking(
            k,
            self.mount_height,
            self.pitch_down_deg.to_radians(),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleFrameConfig {
    /// Uniform translation perturbation bound per axis, meters.
    pub delta_t_m: f64,
    /// Uniform rotation perturbation bound per axis, degrees.
    pub delta_r_deg: f64,
    /// Use every `stride`-th trajectory pose.
    pub stride: usize,
    /// Relocalization rounds, each reselecting visible lane points.
    pub rounds: usize,
}

impl Default for SingleFrameConfig {
    fn default() -> Self {
        Self {
            delta_t_m: 0.5,
            delta_r_deg: 2.5,
            stride: 1,
            rounds: 3,
        }
    }
}

/// Solver settings as read from a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    pub out_of_image_cost: Option<f64>,
    pub window_size: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            max_iterations: s.max_iterations,
            initial_damping: s.initial_damping,
            damping_up: s.damping_up,
            damping_down: s.damping_down,
            step_tolerance: s.step_tolerance,
            cost_tolerance: s.cost_tolerance,
            out_of_image_cost: s.out_of_image_cost,
            window_size: s.window_size,
        }
    }
}

impl SolverSection {
    pub fn to_config(&self, robust: bool) -> SolverConfig {
        SolverConfig {
            max_iterations: self.max_iterations,
            initial_damping: self.initial_damping,
            damping_up: self.damping_up,
            damping_down: self.damping_down,
            step_tolerance: self.step_tolerance,
            cost_tolerance: self.cost_tolerance,
            out_of_image_cost: self.out_of_image_cost,
            window_size: self.window_size,
            robust,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: ExperimentMode,
    pub map: PathBuf,
    pub trajectory: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub noise: NoiseProfile,
    #[serde(default)]
    pub odometry: OdometryNoise,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub perception: PerceptionSettings,
    #[serde(default)]
    pub single_frame: SingleFrameConfig,
    #[serde(default)]
    pub ablate: Vec<Ablation>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ScenarioConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.map, &mut cfg.trajectory, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.camera.rig()?;
        self.noise
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.odometry.validate().map_err(ConfigError::Invalid)?;
        self.solver
            .to_config(true)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.perception.validate().map_err(ConfigError::Invalid)?;
        let sf = &self.single_frame;
        if !(sf.delta_t_m >= 0.0 && sf.delta_r_deg >= 0.0 && sf.stride >= 1 && sf.rounds >= 1) {
            return Err(ConfigError::Invalid(
                "single_frame settings out of range".into(),
            ));
        }
        Ok(())
    }

    pub fn ablated(&self, a: Ablation) -> bool {
        self.ablate.contains(&a)
    }

    pub fn solver_config(&self) -> SolverConfig {
        self.solver.to_config(!self.ablated(Ablation::Cauchy))
    }

    pub fn load_inputs(&self) -> Result<(SemanticMap, Trajectory), ConfigError> {
        let map = crate::map::load_map(&self.map)?;
        let traj = Trajectory::load(&self.trajectory)?;
        if traj.len() < 2 {
            return Err(ConfigError::Invalid(
                "trajectory needs at least 2 poses".into(),
            ));
        }
        Ok((map, traj))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose6D,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory(pub Vec<TimedPose>);

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose6D> {
        self.0.iter().map(|p| &p.pose)
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut out = Vec::new();
        for row in rdr.deserialize::<TrajectoryRow>() {
            let r = row.map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let pose =
                Pose6D::from_quaternion_wxyz(Vector3::new(r.x, r.y, r.z), [r.qw, r.qx, r.qy, r.qz]);
            out.push(TimedPose { t: r.t, pose });
        }
        if out.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(ConfigError::Parse {
                path: path.to_path_buf(),
                message: "timestamps must be strictly increasing".into(),
            });
        }
        Ok(Self(out))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_csv(&text, path)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "x", "y", "z", "qw", "qx", "qy", "qz"])
            .expect("in-memory write");
        for tp in &self.0 {
            let [qw, qx, qy, qz] = tp.pose.quaternion_wxyz();
            let t = tp.pose.translation;
            let rec = [tp.t, t.x, t.y, t.z, qw, qx, qy, qz].map(|v| format!("{v:.16e}"));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Border y offsets of the built-in three-lane road, left to right.
pub const ROAD_BORDERS: [f64; 4] = [5.25, 1.75, -1.75, -5.25];

/// Straight three-lane road along +x from `x0` to `x1`, with border points
/// every 10 m.
pub fn straight_road(x0: f64, x1: f64, lights: Vec<TrafficLight>) -> SemanticMap {
    let borders = ROAD_BORDERS
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let n = ((x1 - x0) / 10.0).ceil() as usize;
            let points = (0..=n)
                .map(|k| Vector3::new((x0 + 10.0 * k as f64).min(x1), y, 0.0))
                .collect();
            LaneBorder {
                id: i as i64 + 1,
                points,
            }
        })
        .collect();
    SemanticMap::new(borders, lights).expect("built-in road is valid")
}

/// A gantry of three lights across the road at `x`: both sides and over
/// the ego lane.
pub fn light_group(first_id: i64, x: f64) -> Vec<TrafficLight> {
    [(6.0, 5.0), (-6.0, 5.0), (0.0, 5.5)]
        .iter()
        .enumerate()
        .map(|(i, &(y, z))| TrafficLight {
            id: first_id + i as i64,
            position: Vector3::new(x, y, z),
        })
        .collect()
}

/// Urban test scene: straight road with light groups at 90 m and 170 m.
pub fn urban_map() -> SemanticMap {
    let mut lights = light_group(101, 90.0);
    lights.extend(light_group(201, 170.0));
    straight_road(-30.0, 300.0, lights)
}

/// Constant-speed drive along the road with a gentle lateral weave inside
/// the ego lane.
pub fn urban_trajectory(frames: usize, speed: f64, dt: f64) -> Trajectory {
    let amp = 0.3;
    let period = 12.0;
    let w = 2.0 * std::f64::consts::PI / period;
    Trajectory(
        (0..frames)
            .map(|k| {
                let t = k as f64 * dt;
                let x = speed * t;
                let y = amp * (w * t).sin();
                let yaw = (amp * w * (w * t).cos() / speed).atan();
                let pose = Pose6D::new(
                    Vector3::new(x, y, 0.0),
                    UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
                );
                TimedPose { t, pose }
            })
            .collect(),
    )
}

/// Frames, speed (m/s) and frame interval (s) of the built-in drive.
pub const URBAN_DRIVE: (usize, f64, f64) = (200, 8.0, 0.1);

fn builtin(mode: ExperimentMode) -> ScenarioConfig {
    ScenarioConfig {
        mode,
        map: PathBuf::from("map.txt"),
        trajectory: PathBuf::from("trajectory.csv"),
        seed: 7,
        output_dir: default_output_dir(),
        camera: CameraConfig::default(),
        noise: NoiseProfile::default(),
        odometry: OdometryNoise::default(),
        solver: SolverSection::default(),
        perception: PerceptionSettings::default(),
        single_frame: SingleFrameConfig::default(),
        ablate: Vec::new(),
    }
}

/// Sliding-window tracking with label noise, noisy boxes and odometry
/// that reads 2% long. Lights are observed up to 30 m.
pub fn sequence_scenario() -> ScenarioConfig {
    let mut cfg = builtin(ExperimentMode::SlidingWindow);
    cfg.noise.class_noise_sd = 0.2;
    cfg.noise.bbox_center_sd_px = 0.5;
    cfg.odometry.speed_bias = 0.02;
    cfg.perception.light_max_depth = 30.0;
    cfg.output_dir = PathBuf::from("out/sequence");
    cfg
}

/// Single-frame relocalization with noiseless perception, every second
/// frame, perturbed by up to 0.5 m and 2.5° per axis.
pub fn single_frame_scenario() -> ScenarioConfig {
    let mut cfg = builtin(ExperimentMode::SingleFrame);
    cfg.single_frame.stride = 2;
    cfg.output_dir = PathBuf::from("out/single_frame");
    cfg
}

/// Lane-only single-frame relocalization with label noise and phantom
/// strips 0.7 m either side of every border.
pub fn robustness_scenario() -> ScenarioConfig {
    let mut cfg = single_frame_scenario();
    cfg.noise.class_noise_sd = 0.2;
    cfg.noise.phantom_offsets_m = vec![0.7, -0.7];
    cfg.ablate = vec![Ablation::Lights];
    cfg.output_dir = PathBuf::from("out/robustness");
    cfg
}

/// Every built-in config with its file name.
pub fn builtin_scenarios() -> Vec<(&'static str, ScenarioConfig)> {
    vec![
        ("sequence.toml", sequence_scenario()),
        ("single_frame.toml", single_frame_scenario()),
        ("robustness.toml", robustness_scenario()),
    ]
}

/// Writes the urban map, the built-in drive and every built-in config
/// into `dir`.
pub fn write_builtin_scenarios(dir: impl AsRef<Path>) -> std::io::Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (frames, speed, dt) = URBAN_DRIVE;
    std::fs::write(dir.join("map.txt"), urban_map().to_text())?;
    std::fs::write(
        dir.join("trajectory.csv"),
        urban_trajectory(frames, speed, dt).to_csv(),
    )?;
    for (name, cfg) in builtin_scenarios() {
        std::fs::write(dir.join(name), cfg.to_toml())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenarios_load_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        write_builtin_scenarios(dir.path()).unwrap();
        for (name, cfg) in builtin_scenarios() {
            let loaded = ScenarioConfig::load(dir.path().join(name)).unwrap();
            loaded.validate().unwrap();
            assert_eq!(loaded.noise, cfg.noise);
            assert_eq!(loaded.mode, cfg.mode);
            let (map, traj) = loaded.load_inputs().unwrap();
            assert_eq!(map, urban_map());
            assert_eq!(traj.len(), URBAN_DRIVE.0);
        }
    }

    #[test]
    fn trajectory_csv_round_trips() {
        let traj = urban_trajectory(20, 8.0, 0.1);
        let text = traj.to_csv();
        assert!(text.starts_with("t,x,y,z,qw,qx,qy,qz\n"));
        let back = Trajectory::parse_csv(&text, Path::new("mem")).unwrap();
        assert_eq!(back.len(), 20);
        for (a, b) in back.0.iter().zip(&traj.0) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.pose.translation, b.pose.translation);
            assert!(a.pose.rotation.angle_to(&b.pose.rotation) < 1e-15);
        }
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        let text = "t,x,y,z,qw,qx,qy,qz\n0,0,0,0,1,0,0,0\n0,1,0,0,1,0,0,0\n";
        assert!(Trajectory::parse_csv(text, Path::new("mem")).is_err());
    }

    #[test]
    fn built_in_map_round_trips_through_text() {
        let map = urban_map();
        let back = SemanticMap::parse(&map.to_text()).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn config_parses_with_defaults() {
        let text = r#"
mode = "sliding-window"
map = "map.txt"
trajectory = "traj.csv"
seed = 3
ablate = ["cauchy", "lights"]

[noise]
bbox_center_sd_px = 0.5
"#;
        let cfg = ScenarioConfig::parse(text, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.mode, ExperimentMode::SlidingWindow);
        assert!(cfg.ablated(Ablation::Lights) && !cfg.ablated(Ablation::Borders));
        assert!(!cfg.solver_config().robust);
        assert_eq!(cfg.noise.bbox_center_sd_px, 0.5);
        cfg.validate().unwrap();
        let again = ScenarioConfig::parse(&cfg.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "mode = \"single-frame\"\nmap = \"m\"\ntrajectory = \"t\"\nbogus = 1\n";
        assert!(matches!(
            ScenarioConfig::parse(text, Path::new("x.toml")),
            Err(ConfigError::Parse { .. })
        ));
    }
}
