//! Uncertainty-aware monocular localization against sparse HD maps.
//!
//! Perception outputs carrying evidential uncertainty (Dirichlet lane
//! rasters, Normal-Inverse-Gamma traffic-light boxes) are turned into
//! differentiable cost maps and reprojection constraints, and fused with
//! odometry in a robust sliding-window pose graph.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod costmap;
pub mod eval;
pub mod evidential;
pub mod geometry;
pub mod map;
pub mod matching;
pub mod perception;
pub mod posegraph;
pub mod raster;
