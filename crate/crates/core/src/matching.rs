//! Association of map traffic lights with detected boxes by reprojected
//! center distance, with persistence until the light is passed.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};

use crate::geometry::{CameraRig, Pose6D, Z_MIN};
use crate::map::VisibleMapSubset;
use crate::perception::NigDetection;

pub const DEFAULT_GATE_PX: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Association {
    pub light_id: i64,
    /// Index into the current frame's detections; `None` while the light is
    /// tracked but unmatched in this frame.
    pub detection_index: Option<usize>,
    pub center_distance_px: f64,
    pub frame_established: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub gate_px: f64,
    /// Detections whose epistemic variance exceeds this are ignored.
    pub max_epistemic: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            gate_px: DEFAULT_GATE_PX,
            max_epistemic: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssociationTable {
    pub active: Vec<Association>,
    /// Frames in which each light held a matched detection.
    pub history: BTreeMap<i64, Vec<u64>>,
    pub frame: u64,
}

impl AssociationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, light_id: i64) -> Option<&Association> {
        self.active.iter().find(|a| a.light_id == light_id)
    }

    /// `(light_id, detection_index)` for every light matched this frame.
    pub fn matched(&self) -> impl Iterator<Item = (i64, usize)> + '_ {
        self.active
            .iter()
            .filter_map(|a| a.detection_index.map(|d| (a.light_id, d)))
    }
}

/// Box center and the variance of that center per axis, from the four edge
/// means and aleatoric variances.
pub fn detection_center_and_variance(d: &NigDetection) -> (Vector2<f64>, Vector2<f64>) {
    let [x0, y0, x1, y1] = d.edges;
    let center = Vector2::new(0.5 * (x0.gamma + x1.gamma), 0.5 * (y0.gamma + y1.gamma));
    let var = Vector2::new(
        0.25 * (x0.aleatoric() + x1.aleatoric()),
        0.25 * (y0.aleatoric() + y1.aleatoric()),
    );
    (center, var)
}

fn in_front_and_frame(rig: &CameraRig, pose: &Pose6D, x: &Vector3<f64>) -> Option<Vector2<f64>> {
    let xc = rig.world_to_camera(pose, x);
    if xc.z <= Z_MIN {
        return None;
    }
    let uv = rig.intrinsics.project(&xc).ok()?;
    rig.intrinsics.contains(&uv, 0.0).then_some(uv)
}

/// Updates the association table for a new frame.
///
/// Lights already tracked claim detections first; remaining lights and
/// detections are paired greedily by ascending center distance within the
/// gate. Tracks end once their light leaves the frustum or is passed.
pub fn match_lights(
    visible: &VisibleMapSubset,
    detections: &[NigDetection],
    pose: &Pose6D,
    rig: &CameraRig,
    table: &AssociationTable,
    cfg: &MatchConfig,
) -> AssociationTable {
    let frame = table.frame + 1;
    let centers: Vec<Option<Vector2<f64>>> = detections
        .iter()
        .map(|d| {
            let admissible = d.edges.iter().all(|e| e.epistemic() <= cfg.max_epistemic);
            admissible.then(|| detection_center_and_variance(d).0)
        })
        .collect();
    let lights: Vec<(i64, Vector2<f64>)> = visible
        .lights
        .iter()
        .filter_map(|l| in_front_and_frame(rig, pose, &l.position).map(|uv| (l.id, uv)))
        .collect();

    let mut pairs_tracked = Vec::new();
    let mut pairs_new = Vec::new();
    for (li, (id, uv)) in lights.iter().enumerate() {
        let tracked = table.get(*id).is_some();
        for (di, c) in centers.iter().enumerate() {
            let Some(c) = c else { continue };
            let dist = (c - uv).norm();
            if dist <= cfg.gate_px {
                let bucket = if tracked {
                    &mut pairs_tracked
                } else {
                    &mut pairs_new
                };
                bucket.push((dist, li, di));
            }
        }
    }
    let by_distance = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    pairs_tracked.sort_by(by_distance);
    pairs_new.sort_by(by_distance);

    let mut light_taken = vec![None::<(usize, f64)>; lights.len()];
    let mut det_taken = vec![false; detections.len()];
    for &(dist, li, di) in pairs_tracked.iter().chain(&pairs_new) {
        if light_taken[li].is_none() && !det_taken[di] {
            light_taken[li] = Some((di, dist));
            det_taken[di] = true;
        }
    }

    let mut out = AssociationTable {
        active: Vec::new(),
        history: table.history.clone(),
        frame,
    };
    for (li, &(id, _)) in lights.iter().enumerate() {
        let previous = table.get(id);
        match (light_taken[li], previous) {
            (Some((di, dist)), prev) => {
                out.active.push(Association {
                    light_id: id,
                    detection_index: Some(di),
                    center_distance_px: dist,
                    frame_established: prev.map_or(frame, |p| p.frame_established),
                });
                out.history.entry(id).or_default().push(frame);
            }
            (None, Some(prev)) => out.active.push(Association {
                detection_index: None,
                center_distance_px: f64::NAN,
                ..*prev
            }),
            (None, None) => {}
        }
    }
    out
}
