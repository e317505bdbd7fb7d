//! Lane-border cost maps.
//!
//! Pipeline: Otsu threshold on the Dirichlet uncertainty raster, lane-class
//! masking to a border mask, exact Euclidean distance transform, confidence
//! weighting, and bicubic sampling with analytic gradient.

mod bicubic;
mod edt;
mod otsu;

use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;
use thiserror::Error;

use crate::evidential::DirichletRaster;
use crate::perception::LaneClass;
use crate::raster::Raster;

pub use bicubic::sample_bicubic;
pub use edt::{distance_field, distance_transform, DistanceField};
pub use otsu::{otsu_bin, otsu_boundary, otsu_cut, otsu_threshold, OTSU_BINS};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CostMapError {
    #[error("all values identical; no threshold separates them")]
    DegenerateInput,
    #[error("border mask is empty")]
    EmptyMask,
    #[error("sample ({u}, {v}) outside the interpolation domain")]
    OutOfBounds { u: f64, v: f64 },
}

/// Binary lane-border mask plus per-pixel border probability (0 off-border).
#[derive(Debug, Clone, PartialEq)]
pub struct BorderExtraction {
    pub mask: Raster<bool>,
    pub prob: Raster<f64>,
}

impl BorderExtraction {
    pub fn border_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m).count()
    }
}

fn is_lane(class: Option<usize>) -> bool {
    matches!(
        class.and_then(LaneClass::from_index),
        Some(LaneClass::DirectDrivable | LaneClass::AlternativeDrivable)
    )
}

/// Border pixels: uncertainty above `threshold` and a drivable argmax class.
/// Border probability is `1 − u`.
pub fn extract_borders(raster: &DirichletRaster, threshold: f64) -> BorderExtraction {
    let unc = raster.uncertainty();
    let classes = raster.argmax();
    let mask = Raster::from_fn(raster.width(), raster.height(), |x, y| {
        unc[(x, y)] > threshold && is_lane(classes[(x, y)])
    });
    let prob = Raster::from_fn(raster.width(), raster.height(), |x, y| {
        if mask[(x, y)] {
            1.0 - unc[(x, y)]
        } else {
            0.0
        }
    });
    BorderExtraction { mask, prob }
}

/// Otsu threshold of the uncertainty raster followed by [`extract_borders`].
pub fn extract_borders_otsu(raster: &DirichletRaster) -> Result<BorderExtraction, CostMapError> {
    let threshold = otsu_threshold(raster.uncertainty().data())?;
    Ok(extract_borders(raster, threshold))
}

/// Borders read off the argmax class map alone, ignoring uncertainty:
/// drivable pixels with a 4-neighbour of a different class. Probability 1.
pub fn class_boundary_borders(raster: &DirichletRaster) -> BorderExtraction {
    let classes = raster.argmax().map(|c| {
        c.and_then(LaneClass::from_index)
            .unwrap_or(LaneClass::NonLane)
    });
    let (w, h) = (raster.width(), raster.height());
    let mask = Raster::from_fn(w, h, |x, y| {
        let c = classes[(x, y)];
        if c == LaneClass::NonLane {
            return false;
        }
        let differs = |nx: usize, ny: usize| classes[(nx, ny)] != c;
        (x > 0 && differs(x - 1, y))
            || (x + 1 < w && differs(x + 1, y))
            || (y > 0 && differs(x, y - 1))
            || (y + 1 < h && differs(x, y + 1))
    });
    let prob = mask.map(|&m| if m { 1.0 } else { 0.0 });
    BorderExtraction { mask, prob }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostMapParams {
    /// Weight of the low-confidence penalty; 0 disables weighting.
    pub prob_weight: f64,
    /// Radius (pixels) of the box blur applied to the nearest-border probability.
    pub blur_radius: usize,
}

impl Default for CostMapParams {
    fn default() -> Self {
        Self {
            prob_weight: 1.0,
            blur_radius: 3,
        }
    }
}

/// Probability-weighted distance-to-border raster with differentiable lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    /// `C_unc`, pixels.
    pub cost: Raster<f64>,
    /// Border probability, zero off the border mask.
    pub border_prob: Raster<f64>,
    /// Probability of the nearest border, smoothed (`p̃`).
    pub confidence: Raster<f64>,
    pub border_pixels: usize,
}

/// Mean filter over a `(2r+1)²` window clipped to the raster.
fn box_blur(src: &Raster<f64>, radius: usize) -> Raster<f64> {
    let (w, h) = (src.width(), src.height());
    // Summed-area table with a zero first row and column.
    let mut sat = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += src[(x, y)];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    Raster::from_fn(w, h, |x, y| {
        let (x0, y0) = (x.saturating_sub(radius), y.saturating_sub(radius));
        let (x1, y1) = ((x + radius + 1).min(w), (y + radius + 1).min(h));
        let s = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
            + sat[y0 * (w + 1) + x0];
        s / ((x1 - x0) * (y1 - y0)) as f64
    })
}

/// `C_unc = edt · (1 + w_p · (1 − p̃))`, where `p̃` is the probability of
/// each pixel's nearest border pixel, box-blurred so the weight changes
/// smoothly between borders of different confidence.
pub fn build_cost_map(
    field: &DistanceField,
    prob: &Raster<f64>,
    params: &CostMapParams,
) -> CostMap {
    assert!(field.distance.same_shape(prob), "raster shape mismatch");
    let nearest_prob = field
        .nearest
        .map(|&(nx, ny)| prob[(nx as usize, ny as usize)]);
    let confidence = box_blur(&nearest_prob, params.blur_radius);
    let cost = Raster::from_fn(prob.width(), prob.height(), |x, y| {
        let d = field.distance[(x, y)];
        if params.prob_weight == 0.0 {
            d
        } else {
            d * (1.0 + params.prob_weight * (1.0 - confidence[(x, y)]))
        }
    });
    let border_pixels = field.squared.data().iter().filter(|&&s| s == 0).count();
    CostMap {
        cost,
        border_prob: prob.clone(),
        confidence,
        border_pixels,
    }
}

impl CostMap {
    pub fn from_borders(
        borders: &BorderExtraction,
        params: &CostMapParams,
    ) -> Result<Self, CostMapError> {
        let field = distance_field(&borders.mask)?;
        Ok(build_cost_map(&field, &borders.prob, params))
    }

    pub fn width(&self) -> usize {
        self.cost.width()
    }

    pub fn height(&self) -> usize {
        self.cost.height()
    }

    /// Cost and `(∂/∂u, ∂/∂v)` at sub-pixel `uv`.
    pub fn sample(&self, uv: &Vector2<f64>) -> Result<(f64, Vector2<f64>), CostMapError> {
        sample_bicubic(&self.cost, uv)
    }

    /// Smoothed nearest-border probability at the pixel closest to `uv`.
    pub fn confidence_at(&self, uv: &Vector2<f64>) -> f64 {
        let x = uv.x.round().clamp(0.0, (self.width() - 1) as f64) as usize;
        let y = uv.y.round().clamp(0.0, (self.height() - 1) as f64) as usize;
        self.confidence[(x, y)]
    }

    /// Debug dump: `u32` width, `u32` height (little endian), then the cost
    /// raster row-major as little-endian `f32`.
    pub fn write_f32_dump(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(&(self.width() as u32).to_le_bytes())?;
        out.write_all(&(self.height() as u32).to_le_bytes())?;
        for &v in self.cost.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_f32_dump(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_f32_dump(std::io::BufWriter::new(file))
    }
}

/// Reads a raster written by [`CostMap::write_f32_dump`].
pub fn read_f32_dump(bytes: &[u8]) -> Option<Raster<f32>> {
    let w = u32::from_le_bytes(bytes.get(0..4)?.try_into().ok()?) as usize;
    let h = u32::from_le_bytes(bytes.get(4..8)?.try_into().ok()?) as usize;
    let body = bytes.get(8..)?;
    if body.len() != w * h * 4 {
        return None;
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    Some(Raster::from_vec(w, h, data))
}
