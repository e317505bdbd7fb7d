//! Python bindings for the localization experiments.

use std::path::PathBuf;

use nalgebra::{Vector3, Vector6};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use uncloc::costmap::{distance_transform, otsu_threshold};
use uncloc::eval::experiment::{self, ErrorSummary, FrameRecord, RunError, DOF_NAMES};
use uncloc::eval::metrics;
use uncloc::eval::scenario::{self, Ablation, CameraConfig, ScenarioConfig};
use uncloc::evidential::{self as ev, DirichletParams, NigParams};
use uncloc::geometry::Pose6D;
use uncloc::map::{load_map, SemanticMap};
use uncloc::raster::Raster;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_err(e: RunError) -> PyErr {
    match e {
        RunError::Config(c) => value_err(c),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Rigid vehicle pose. Angles are radians.
#[pyclass(name = "Pose", frozen, from_py_object)]
#[derive(Clone)]
struct PyPose(Pose6D);

#[pymethods]
impl PyPose {
    #[new]
    #[pyo3(signature = (x=0.0, y=0.0, z=0.0, yaw=0.0, pitch=0.0, roll=0.0))]
    fn new(x: f64, y: f64, z: f64, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self(Pose6D::from_xyz_ypr(
            Vector3::new(x, y, z),
            yaw,
            pitch,
            roll,
        ))
    }

    #[getter]
    fn translation(&self) -> (f64, f64, f64) {
        let t = self.0.translation;
        (t.x, t.y, t.z)
    }

    /// `(yaw, pitch, roll)`.
    #[getter]
    fn angles(&self) -> (f64, f64, f64) {
        self.0.yaw_pitch_roll()
    }

    #[getter]
    fn quaternion_wxyz(&self) -> [f64; 4] {
        self.0.quaternion_wxyz()
    }

    fn compose(&self, other: &PyPose) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// Applies a right increment `[tx, ty, tz, rx, ry, rz]`.
    fn boxplus(&self, delta: [f64; 6]) -> Self {
        Self(self.0.boxplus(&Vector6::from(delta)))
    }

    /// Increment taking `base` to this pose.
    fn boxminus(&self, base: &PyPose) -> [f64; 6] {
        self.0.boxminus(&base.0).into()
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        self.0.transform_point(&Vector3::from(p)).into()
    }

    fn __repr__(&self) -> String {
        let (x, y, z) = self.translation();
        let (yaw, pitch, roll) = self.angles();
        format!("Pose(x={x}, y={y}, z={z}, yaw={yaw}, pitch={pitch}, roll={roll})")
    }
}

#[pyclass(name = "Map", frozen)]
struct PyMap(SemanticMap);

#[pymethods]
impl PyMap {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        SemanticMap::parse(text).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_map(path).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn urban() -> Self {
        Self(scenario::urban_map())
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    #[getter]
    fn lane_borders(&self) -> usize {
        self.0.lane_borders.len()
    }

    #[getter]
    fn traffic_lights(&self) -> usize {
        self.0.traffic_lights.len()
    }
}

/// Experiment configuration, as read from a TOML scenario file.
#[pyclass(name = "Scenario")]
struct PyScenario(ScenarioConfig);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ScenarioConfig::load(path).map(Self).map_err(value_err)
    }

    /// One of `sequence`, `single_frame` or `robustness`, reading
    /// `map.txt` and `trajectory.csv` relative to the working directory.
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        scenario::builtin_scenarios()
            .into_iter()
            .find(|(file, _)| file.strip_suffix(".toml") == Some(name))
            .map(|(_, cfg)| Self(cfg))
            .ok_or_else(|| PyValueError::new_err(format!("no built-in scenario {name:?}")))
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn get_map(&self) -> PathBuf {
        self.0.map.clone()
    }

    #[setter]
    fn set_map(&mut self, path: PathBuf) {
        self.0.map = path;
    }

    #[getter]
    fn get_trajectory(&self) -> PathBuf {
        self.0.trajectory.clone()
    }

    #[setter]
    fn set_trajectory(&mut self, path: PathBuf) {
        self.0.trajectory = path;
    }

    #[getter]
    fn get_ablations(&self) -> Vec<String> {
        self.0.ablate.iter().map(|a| a.name().to_string()).collect()
    }

    /// Disables `uncertainty`, `cauchy`, `lights` or `borders`.
    fn ablate(&mut self, component: &str) -> PyResult<()> {
        let a = Ablation::parse(component)
            .ok_or_else(|| PyValueError::new_err(format!("unknown component {component:?}")))?;
        if !self.0.ablated(a) {
            self.0.ablate.push(a);
        }
        Ok(())
    }

    fn validate(&self) -> PyResult<()> {
        self.0.validate().map_err(value_err)
    }
}

fn records_to_py<'py>(
    py: Python<'py>,
    records: &[FrameRecord],
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("t", r.t)?;
            for (name, e) in DOF_NAMES.iter().zip(r.errors.as_array()) {
                d.set_item(*name, e)?;
            }
            d.set_item("n_lb", r.n_lb)?;
            d.set_item("n_tl", r.n_tl)?;
            d.set_item("iters", r.iters)?;
            d.set_item("converged", r.converged)?;
            d.set_item("success", r.errors.is_success())?;
            Ok(d)
        })
        .collect()
}

fn run_with(
    py: Python<'_>,
    cfg: &ScenarioConfig,
    f: fn(
        &ScenarioConfig,
        &SemanticMap,
        &scenario::Trajectory,
    ) -> Result<Vec<FrameRecord>, RunError>,
) -> PyResult<Vec<FrameRecord>> {
    let cfg = cfg.clone();
    py.detach(move || {
        let (map, traj) = cfg.load_inputs().map_err(RunError::from)?;
        f(&cfg, &map, &traj)
    })
    .map_err(run_err)
}

/// Per-frame pose errors of single-frame relocalization, as dicts keyed
/// like the columns of `frames.csv` plus `success`.
#[pyfunction]
fn run_single_frame<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let records = run_with(py, &scenario.0, experiment::run_single_frame)?;
    records_to_py(py, &records)
}

#[pyfunction]
fn run_sequence<'py>(py: Python<'py>, scenario: &PyScenario) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let records = run_with(py, &scenario.0, experiment::run_sequence)?;
    records_to_py(py, &records)
}

/// `(ece, ence)` of the synthetic perception along the trajectory.
#[pyfunction]
fn run_calibration(py: Python<'_>, scenario: &PyScenario) -> PyResult<(f64, f64)> {
    let cfg = scenario.0.clone();
    py.detach(move || {
        let (map, traj) = cfg.load_inputs().map_err(RunError::from)?;
        experiment::run_calibration(&cfg, &map, &traj)
    })
    .map_err(run_err)
}

/// RMSE and MAE per degree of freedom over records from a run.
#[pyfunction]
fn summarize<'py>(
    py: Python<'py>,
    records: Vec<Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut rows = Vec::with_capacity(records.len());
    for r in &records {
        let mut e = [0.0; 6];
        for (slot, name) in e.iter_mut().zip(DOF_NAMES) {
            *slot = r
                .get_item(name)?
                .ok_or_else(|| PyValueError::new_err(format!("record without {name}")))?
                .extract()?;
        }
        rows.push(FrameRecord {
            t: 0.0,
            errors: experiment::PoseErrors::from_array(e),
            n_lb: 0,
            n_tl: 0,
            iters: 0,
            converged: true,
        });
    }
    let s = ErrorSummary::of(&rows);
    let out = PyDict::new(py);
    for (i, name) in DOF_NAMES.iter().enumerate() {
        out.set_item(*name, (s.rmse[i], s.mae[i]))?;
    }
    Ok(out)
}

/// Pixel coordinates of a world point seen from `pose` by the default camera,
/// or `None` when it falls behind the image plane.
#[pyfunction]
fn project(pose: &PyPose, point: [f64; 3]) -> PyResult<Option<(f64, f64)>> {
    let rig = CameraConfig::default().rig().map_err(value_err)?;
    Ok(rig
        .project_world(&pose.0, &Vector3::from(point))
        .ok()
        .map(|uv| (uv.x, uv.y)))
}

/// Euclidean distance from each pixel of a row-major mask to its nearest set pixel.
#[pyfunction]
fn distance_transform_2d(mask: Vec<Vec<bool>>) -> PyResult<Vec<Vec<f64>>> {
    let h = mask.len();
    let w = mask.first().map_or(0, Vec::len);
    if w == 0 || mask.iter().any(|row| row.len() != w) {
        return Err(PyValueError::new_err("mask must be a non-empty rectangle"));
    }
    let raster = Raster::from_vec(w, h, mask.concat());
    let d = distance_transform(&raster).map_err(value_err)?;
    Ok(d.data().chunks(w).map(<[f64]>::to_vec).collect())
}

#[pyfunction]
fn otsu(values: Vec<f64>) -> PyResult<f64> {
    otsu_threshold(&values).map_err(value_err)
}

/// `(expected class probabilities, uncertainty K/S)` of a Dirichlet.
#[pyfunction]
fn dirichlet(alpha: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
    let d = DirichletParams::new(alpha).map_err(value_err)?;
    Ok((
        ev::dirichlet_expected_prob(&d),
        ev::dirichlet_uncertainty(&d),
    ))
}

/// `(aleatoric, epistemic)` variance of a Normal-Inverse-Gamma.
#[pyfunction]
fn nig_uncertainty(gamma: f64, upsilon: f64, alpha: f64, beta: f64) -> PyResult<(f64, f64)> {
    let n = NigParams::new(gamma, upsilon, alpha, beta).map_err(value_err)?;
    Ok(ev::nig_uncertainties(&n))
}

#[pyfunction]
fn nig_nll(gamma: f64, upsilon: f64, alpha: f64, beta: f64, y: f64) -> PyResult<f64> {
    let n = NigParams::new(gamma, upsilon, alpha, beta).map_err(value_err)?;
    Ok(ev::nig_nll(&n, y))
}

#[pyfunction]
#[pyo3(signature = (confidences, correct, bins=metrics::DEFAULT_BINS))]
fn ece(confidences: Vec<f64>, correct: Vec<bool>, bins: usize) -> PyResult<f64> {
    metrics::ece(&confidences, &correct, bins).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (predicted_vars, squared_errors, bins=metrics::DEFAULT_BINS))]
fn ence(predicted_vars: Vec<f64>, squared_errors: Vec<f64>, bins: usize) -> PyResult<f64> {
    metrics::ence(&predicted_vars, &squared_errors, bins).map_err(value_err)
}

/// Writes the built-in map, trajectory and scenario files into `dir`.
#[pyfunction]
fn write_builtin_scenarios(dir: PathBuf) -> PyResult<()> {
    scenario::write_builtin_scenarios(dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "uncloc")]
fn uncloc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPose>()?;
    m.add_class::<PyMap>()?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(run_single_frame, m)?)?;
    m.add_function(wrap_pyfunction!(run_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(run_calibration, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(distance_transform_2d, m)?)?;
    m.add_function(wrap_pyfunction!(otsu, m)?)?;
    m.add_function(wrap_pyfunction!(dirichlet, m)?)?;
    m.add_function(wrap_pyfunction!(nig_uncertainty, m)?)?;
    m.add_function(wrap_pyfunction!(nig_nll, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(ence, m)?)?;
    m.add_function(wrap_pyfunction!(write_builtin_scenarios, m)?)?;
    m.add("SUCCESS_LATERAL_M", experiment::SUCCESS_LATERAL_M)?;
    m.add("SUCCESS_YAW_DEG", experiment::SUCCESS_YAW_DEG)?;
    Ok(())
}
