//! Per-frame glue from a perception render to solver inputs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::costmap::{class_boundary_borders, extract_borders_otsu, CostMap, CostMapParams};
use crate::geometry::{CameraRig, Pose6D};
use crate::map::{visible_subset_with, SemanticMap, VisibilityQuery};
use crate::matching::{
    detection_center_and_variance, match_lights, AssociationTable, MatchConfig, DEFAULT_GATE_PX,
};
use crate::perception::NigDetection;
use crate::posegraph::{
    localize_single_frame, FrameData, LightObservation, PoseGraphError, SolveReport, SolverConfig,
};

/// Source of the lane-border mask fed into the cost map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BorderSource {
    /// Otsu-thresholded uncertainty, weighted by border probability.
    Uncertainty,
    /// Boundaries between argmax classes, unweighted.
    ClassBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionSettings {
    pub prob_weight: f64,
    pub blur_radius: usize,
    pub lane_spacing: f64,
    pub lane_max_depth: f64,
    /// Lane points must project at least this far inside the image.
    pub margin_px: f64,
    pub light_max_depth: f64,
    pub gate_px: f64,
    pub max_epistemic: Option<f64>,
}

impl Default for PerceptionSettings {
    fn default() -> Self {
        let cm = CostMapParams::default();
        Self {
            prob_weight: cm.prob_weight,
            blur_radius: cm.blur_radius,
            lane_spacing: 0.5,
            lane_max_depth: 40.0,
            margin_px: 8.0,
            light_max_depth: 50.0,
            gate_px: DEFAULT_GATE_PX,
            max_epistemic: None,
        }
    }
}

impl PerceptionSettings {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.prob_weight >= 0.0
            && self.lane_spacing > 0.0
            && self.lane_max_depth > 0.0
            && self.margin_px >= 0.0
            && self.light_max_depth > 0.0
            && self.gate_px > 0.0
            && self.max_epistemic.is_none_or(|m| m > 0.0);
        if ok {
            Ok(())
        } else {
            Err(format!("perception settings out of range: {self:?}"))
        }
    }

    pub fn cost_map_params(&self, source: BorderSource) -> CostMapParams {
        CostMapParams {
            prob_weight: match source {
                BorderSource::Uncertainty => self.prob_weight,
                BorderSource::ClassBoundary => 0.0,
            },
            blur_radius: self.blur_radius,
        }
    }

    pub fn lane_query(&self) -> VisibilityQuery {
        VisibilityQuery {
            max_depth: self.lane_max_depth,
            lane_spacing: self.lane_spacing,
            margin_px: self.margin_px,
        }
    }

    pub fn light_query(&self) -> VisibilityQuery {
        VisibilityQuery {
            max_depth: self.light_max_depth,
            lane_spacing: self.lane_spacing,
            margin_px: 0.0,
        }
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            gate_px: self.gate_px,
            max_epistemic: self.max_epistemic.unwrap_or(f64::INFINITY),
        }
    }
}

/// Cost map of one render, or `None` when no border pixel is found.
pub fn frame_cost_map(
    dirichlet: &crate::evidential::DirichletRaster,
    source: BorderSource,
    settings: &PerceptionSettings,
) -> Option<CostMap> {
    let borders = match source {
        BorderSource::Uncertainty => extract_borders_otsu(dirichlet).ok()?,
        BorderSource::ClassBoundary => class_boundary_borders(dirichlet),
    };
    CostMap::from_borders(&borders, &settings.cost_map_params(source)).ok()
}

/// Lane points expected to be visible from `pose`.
pub fn visible_lane_points(
    map: &SemanticMap,
    pose: &Pose6D,
    rig: &CameraRig,
    settings: &PerceptionSettings,
) -> Vec<nalgebra::Vector3<f64>> {
    visible_subset_with(map, pose, rig, &settings.lane_query()).lane_points
}

/// Associates detections with map lights seen from `pose` and returns the
/// updated table with one observation per matched light.
pub fn observe_lights(
    map: &SemanticMap,
    detections: &[NigDetection],
    pose: &Pose6D,
    rig: &CameraRig,
    table: &AssociationTable,
    settings: &PerceptionSettings,
) -> (AssociationTable, Vec<LightObservation>) {
    let visible = visible_subset_with(map, pose, rig, &settings.light_query());
    let next = match_lights(
        &visible,
        detections,
        pose,
        rig,
        table,
        &settings.match_config(),
    );
    let obs = next
        .matched()
        .filter_map(|(id, di)| {
            let light = visible.lights.iter().find(|l| l.id == id)?;
            let (center, variance) = detection_center_and_variance(&detections[di]);
            Some(LightObservation {
                position: light.position,
                center,
                variance,
            })
        })
        .collect();
    (next, obs)
}

/// Inputs for relocalizing one image.
pub struct RelocalizationInput<'a> {
    pub map: &'a SemanticMap,
    pub rig: &'a CameraRig,
    pub cost_map: Option<Arc<CostMap>>,
    pub lights: Vec<LightObservation>,
    pub timestamp: f64,
}

/// Single-frame relocalization. Visible lane points are reselected at the
/// current estimate for each of `rounds` solves. A robust solver is
/// preceded by one round with the quadratic kernel.
pub fn relocalize(
    input: &RelocalizationInput<'_>,
    init: Pose6D,
    settings: &PerceptionSettings,
    solver: &SolverConfig,
    rounds: usize,
) -> Result<SolveReport, PoseGraphError> {
    let mut pose = init;
    let mut last: Option<SolveReport> = None;
    let warm = usize::from(solver.robust);
    for round in 0..rounds.max(1) + warm {
        let lane_points = match &input.cost_map {
            Some(_) => visible_lane_points(input.map, &pose, input.rig, settings),
            None => Vec::new(),
        };
        let frame = FrameData {
            timestamp: input.timestamp,
            cost_map: input.cost_map.clone(),
            lane_points,
            lights: input.lights.clone(),
        };
        let cfg = SolverConfig {
            robust: solver.robust && round >= warm,
            ..*solver
        };
        let mut report = localize_single_frame(input.rig, frame, pose, &cfg)?;
        let moved = report.latest().boxminus(&pose).norm();
        pose = report.latest();
        if let Some(prev) = &last {
            report.iterations += prev.iterations;
            report.initial_cost = prev.initial_cost;
        }
        last = Some(report);
        if moved < 1e-4 && round >= warm {
            break;
        }
    }
    Ok(last.expect("at least one round"))
}
