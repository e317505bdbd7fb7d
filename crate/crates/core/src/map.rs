//! Sparse semantic map: lane-border polylines and traffic lights.
//!
//! Text format, one record per line, whitespace separated, `#` starts a
//! comment line:
//!
//! ```text
//! lane_border <id>
//! pt <x> <y> <z>
//! pt <x> <y> <z>
//! traffic_light <id> <x> <y> <z>
//! ```
//!
//! `pt` lines extend the most recent `lane_border` block. A `traffic_light`
//! line is a block of its own and closes any open lane border.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{CameraRig, Pose6D, Z_MIN};

/// Default spacing (meters) of resampled lane-border points.
pub const DEFAULT_LANE_SPACING: f64 = 0.5;
/// Default far culling distance (meters).
pub const DEFAULT_MAX_DEPTH: f64 = 50.0;

const MIN_POINT_SEPARATION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid map: {0}")]
    InvariantViolation(String),
    #[error("cannot read map file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneBorder {
    pub id: i64,
    pub points: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficLight {
    pub id: i64,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemanticMap {
    pub lane_borders: Vec<LaneBorder>,
    pub traffic_lights: Vec<TrafficLight>,
}

impl SemanticMap {
    pub fn new(
        lane_borders: Vec<LaneBorder>,
        traffic_lights: Vec<TrafficLight>,
    ) -> Result<Self, MapError> {
        let map = Self {
            lane_borders,
            traffic_lights,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        for lb in &self.lane_borders {
            if lb.points.len() < 2 {
                return Err(MapError::InvariantViolation(format!(
                    "lane_border {} has {} point(s), need at least 2",
                    lb.id,
                    lb.points.len()
                )));
            }
            for (i, w) in lb.points.windows(2).enumerate() {
                if (w[1] - w[0]).norm() <= MIN_POINT_SEPARATION {
                    return Err(MapError::InvariantViolation(format!(
                        "lane_border {}: points {} and {} coincide",
                        lb.id,
                        i,
                        i + 1
                    )));
                }
            }
        }
        let mut seen = HashSet::new();
        for tl in &self.traffic_lights {
            if !seen.insert(tl.id) {
                return Err(MapError::InvariantViolation(format!(
                    "duplicate traffic_light id {}",
                    tl.id
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut borders: Vec<LaneBorder> = Vec::new();
        let mut lights = Vec::new();
        let mut open_border = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |message: String| MapError::Parse {
                line: line_no,
                message,
            };
            match fields[0] {
                "lane_border" => {
                    if fields.len() != 2 {
                        return Err(err("expected `lane_border <id>`".into()));
                    }
                    let id = parse_int(fields[1], "id").map_err(err)?;
                    borders.push(LaneBorder {
                        id,
                        points: Vec::new(),
                    });
                    open_border = true;
                }
                "pt" => {
                    if !open_border {
                        return Err(err("`pt` outside of a lane_border block".into()));
                    }
                    if fields.len() != 4 {
                        return Err(err("expected `pt <x> <y> <z>`".into()));
                    }
                    let p = parse_vec3(&fields[1..4]).map_err(err)?;
                    borders.last_mut().expect("open border").points.push(p);
                }
                "traffic_light" => {
                    if fields.len() != 5 {
                        return Err(err("expected `traffic_light <id> <x> <y> <z>`".into()));
                    }
                    let id = parse_int(fields[1], "id").map_err(err)?;
                    let position = parse_vec3(&fields[2..5]).map_err(err)?;
                    lights.push(TrafficLight { id, position });
                    open_border = false;
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        Self::new(borders, lights)
    }

    /// Serializes in the text format; floats use the shortest exact representation.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# semantic map\n");
        for lb in &self.lane_borders {
            let _ = writeln!(out, "lane_border {}", lb.id);
            for p in &lb.points {
                let _ = writeln!(out, "pt {} {} {}", p.x, p.y, p.z);
            }
        }
        for tl in &self.traffic_lights {
            let p = tl.position;
            let _ = writeln!(out, "traffic_light {} {} {} {}", tl.id, p.x, p.y, p.z);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MapError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// All lane-border points resampled at `spacing` meters.
    pub fn lane_points(&self, spacing: f64) -> Vec<Vector3<f64>> {
        self.lane_borders
            .iter()
            .flat_map(|lb| resample_polyline(&lb.points, spacing))
            .collect()
    }
}

fn parse_int(s: &str, what: &str) -> Result<i64, String> {
    s.parse::<i64>()
        .map_err(|_| format!("invalid integer {what} `{s}`"))
}

fn parse_vec3(fields: &[&str]) -> Result<Vector3<f64>, String> {
    let mut v = [0.0; 3];
    for (slot, (s, axis)) in v.iter_mut().zip(fields.iter().zip(["x", "y", "z"])) {
        let x = s
            .parse::<f64>()
            .map_err(|_| format!("invalid {axis} coordinate `{s}`"))?;
        if !x.is_finite() {
            return Err(format!("non-finite {axis} coordinate `{s}`"));
        }
        *slot = x;
    }
    Ok(Vector3::from(v))
}

pub fn load_map(path: impl AsRef<Path>) -> Result<SemanticMap, MapError> {
    let text = std::fs::read_to_string(path)?;
    SemanticMap::parse(&text)
}

/// Points at arc-length multiples of `spacing`, always including both endpoints.
pub fn resample_polyline(poly: &[Vector3<f64>], spacing: f64) -> Vec<Vector3<f64>> {
    assert!(spacing > 0.0, "spacing must be positive");
    let Some(first) = poly.first() else {
        return Vec::new();
    };
    let mut out = vec![*first];
    if poly.len() < 2 {
        return out;
    }
    let total: f64 = poly.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let steps = (total / spacing).floor() as usize;
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut seg_len = (poly[1] - poly[0]).norm();
    for k in 1..=steps {
        let s = k as f64 * spacing;
        if total - s < 1e-9 {
            break;
        }
        while s > seg_start + seg_len && seg + 2 < poly.len() {
            seg_start += seg_len;
            seg += 1;
            seg_len = (poly[seg + 1] - poly[seg]).norm();
        }
        let t = ((s - seg_start) / seg_len).clamp(0.0, 1.0);
        out.push(poly[seg] + (poly[seg + 1] - poly[seg]) * t);
    }
    out.push(*poly.last().expect("nonempty"));
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VisibleMapSubset {
    pub lane_points: Vec<Vector3<f64>>,
    pub lights: Vec<TrafficLight>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityQuery {
    pub max_depth: f64,
    pub lane_spacing: f64,
    /// Pixels kept clear of every image edge.
    pub margin_px: f64,
}

impl Default for VisibilityQuery {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            lane_spacing: DEFAULT_LANE_SPACING,
            margin_px: 0.0,
        }
    }
}

impl VisibilityQuery {
    fn accepts(&self, rig: &CameraRig, pose: &Pose6D, x: &Vector3<f64>) -> bool {
        let xc = rig.world_to_camera(pose, x);
        if xc.z <= Z_MIN || xc.z > self.max_depth {
            return false;
        }
        rig.intrinsics
            .project(&xc)
            .is_ok_and(|uv| rig.intrinsics.contains(&uv, self.margin_px))
    }
}

pub fn visible_subset(
    map: &SemanticMap,
    pose: &Pose6D,
    rig: &CameraRig,
    max_depth: f64,
) -> VisibleMapSubset {
    visible_subset_with(
        map,
        pose,
        rig,
        &VisibilityQuery {
            max_depth,
            ..Default::default()
        },
    )
}

pub fn visible_subset_with(
    map: &SemanticMap,
    pose: &Pose6D,
    rig: &CameraRig,
    query: &VisibilityQuery,
) -> VisibleMapSubset {
    let lane_points = map
        .lane_points(query.lane_spacing)
        .into_iter()
        .filter(|p| query.accepts(rig, pose, p))
        .collect();
    let lights = map
        .traffic_lights
        .iter()
        .filter(|tl| query.accepts(rig, pose, &tl.position))
        .copied()
        .collect();
    VisibleMapSubset {
        lane_points,
        lights,
    }
}
