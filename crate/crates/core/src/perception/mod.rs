//! Synthetic perception: Dirichlet lane rasters and NIG traffic-light boxes
//! rendered from a ground-truth pose, with seeded noise and failure injection.

mod pgm;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::distance_field;
use crate::eval::metrics::{ece, ence, MetricsError, DEFAULT_BINS};
use crate::evidential::{DirichletRaster, NigParams};
use crate::geometry::{CameraRig, Pose6D};
use crate::map::{visible_subset, SemanticMap};
use crate::raster::Raster;

pub use pgm::{read_pgm16, write_pgm16};

pub const NUM_CLASSES: usize = 3;

/// Near clipping depth for drawing border polylines, meters.
const DRAW_NEAR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LaneClass {
    DirectDrivable = 0,
    AlternativeDrivable = 1,
    NonLane = 2,
}

impl LaneClass {
    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Self::DirectDrivable),
            1 => Some(Self::AlternativeDrivable),
            2 => Some(Self::NonLane),
            _ => None,
        }
    }

    pub fn is_drivable(self) -> bool {
        self != Self::NonLane
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseProfile {
    /// Dirichlet α of the true class on a border line pixel.
    pub border_alpha_peak: f64,
    pub border_width_px: f64,
    /// Total evidence away from borders.
    pub region_evidence: f64,
    pub class_noise_sd: f64,
    pub bbox_center_sd_px: f64,
    pub bbox_var_scale: f64,
    /// Lower bound on the declared edge variance, px².
    pub bbox_var_floor_px2: f64,
    pub detect_dropout_prob: f64,
    pub occlusion_rects: Vec<PixelRect>,
    /// Lateral offsets (meters, left positive) of phantom strips drawn
    /// alongside every lane border as uncertain non-lane pixels.
    pub phantom_offsets_m: Vec<f64>,
    pub phantom_evidence: f64,
    /// Half width and half height of a traffic light housing, meters.
    pub light_half_size_m: [f64; 2],
    /// Ground and borders are rendered up to this depth, meters.
    pub render_depth: f64,
    pub rng_seed: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            border_alpha_peak: 4.0,
            border_width_px: 3.0,
            region_evidence: 1000.0,
            class_noise_sd: 0.0,
            bbox_center_sd_px: 0.0,
            bbox_var_scale: 1.0,
            bbox_var_floor_px2: 0.01,
            detect_dropout_prob: 0.0,
            occlusion_rects: Vec::new(),
            phantom_offsets_m: Vec::new(),
            phantom_evidence: 0.5,
            light_half_size_m: [0.2, 0.5],
            render_depth: 100.0,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("invalid noise profile: {0}")]
    InvalidNoise(String),
    #[error("need at least {needed} {what}, got {got}")]
    InsufficientSamples {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl NoiseProfile {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        let bad = |m: &str| Err(PerceptionError::InvalidNoise(m.to_string()));
        if !(self.border_alpha_peak >= 1.0) {
            return bad("border_alpha_peak must be >= 1");
        }
        if !(self.region_evidence >= 0.0 && self.border_width_px >= 0.0) {
            return bad("evidence and border width must be >= 0");
        }
        if !(self.class_noise_sd >= 0.0
            && self.bbox_center_sd_px >= 0.0
            && self.bbox_var_scale >= 0.0)
        {
            return bad("standard deviations must be >= 0");
        }
        if !(self.bbox_var_floor_px2 > 0.0) {
            return bad("bbox_var_floor_px2 must be > 0");
        }
        if !(0.0..=1.0).contains(&self.detect_dropout_prob) {
            return bad("detect_dropout_prob must lie in [0, 1]");
        }
        if !(self.phantom_evidence >= 0.0) {
            return bad("phantom_evidence must be >= 0");
        }
        if !(self.light_half_size_m[0] > 0.0 && self.light_half_size_m[1] > 0.0) {
            return bad("light_half_size_m must be positive");
        }
        if !(self.render_depth > DRAW_NEAR) {
            return bad("render_depth too small");
        }
        Ok(())
    }

    /// Declared aleatoric variance of every box edge, px².
    pub fn edge_variance(&self) -> f64 {
        (self.bbox_var_scale * self.bbox_center_sd_px)
            .powi(2)
            .max(self.bbox_var_floor_px2)
    }
}

/// Box edges in the order `(x_min, y_min, x_max, y_max)`, pixels.
pub type BoxCoords = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigDetection {
    pub edges: [NigParams; 4],
}

impl NigDetection {
    pub fn box_mean(&self) -> BoxCoords {
        self.edges.map(|e| e.gamma)
    }
}

/// Geometric ground truth the render was produced from.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLabels {
    pub classes: Raster<LaneClass>,
    /// Pixels on a rasterized border line; excluded from class accuracy.
    pub border_line: Raster<bool>,
    /// Exact box of each rendered detection, parallel to `detections`.
    pub boxes: Vec<BoxCoords>,
    pub light_ids: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRender {
    pub dirichlet: DirichletRaster,
    pub detections: Vec<NigDetection>,
    pub truth_pose: Pose6D,
    pub labels: SceneLabels,
}

/// Polyline in the vehicle body frame, xy only.
struct BodyLine(Vec<Vector2<f64>>);

impl BodyLine {
    /// Lateral offset of the line at longitudinal position `x`.
    fn lateral_at(&self, x: f64) -> Option<f64> {
        self.0.windows(2).find_map(|w| {
            let (a, b) = (w[0], w[1]);
            let (lo, hi) = if a.x <= b.x { (a, b) } else { (b, a) };
            if x < lo.x || x > hi.x {
                return None;
            }
            if hi.x == lo.x {
                return Some(lo.y);
            }
            Some(lo.y + (hi.y - lo.y) * (x - lo.x) / (hi.x - lo.x))
        })
    }
}

struct LaneLayout {
    lines: Vec<BodyLine>,
    ego_left: Option<usize>,
    ego_right: Option<usize>,
}

impl LaneLayout {
    fn new(map: &SemanticMap, truth: &Pose6D) -> Self {
        let lines: Vec<BodyLine> = map
            .lane_borders
            .iter()
            .map(|b| {
                BodyLine(
                    b.points
                        .iter()
                        .map(|p| truth.inverse_transform_point(p).xy())
                        .collect(),
                )
            })
            .collect();
        let (mut ego_left, mut ego_right) = (None::<(usize, f64)>, None::<(usize, f64)>);
        for (i, line) in lines.iter().enumerate() {
            let Some(y) = line.lateral_at(0.0) else {
                continue;
            };
            if y > 0.0 && ego_left.is_none_or(|(_, best)| y < best) {
                ego_left = Some((i, y));
            }
            if y < 0.0 && ego_right.is_none_or(|(_, best)| y > best) {
                ego_right = Some((i, y));
            }
        }
        Self {
            lines,
            ego_left: ego_left.map(|e| e.0),
            ego_right: ego_right.map(|e| e.0),
        }
    }

    fn classify(&self, g: &Vector2<f64>) -> LaneClass {
        let at = |i: Option<usize>| i.and_then(|i| self.lines[i].lateral_at(g.x));
        if let (Some(l), Some(r)) = (at(self.ego_left), at(self.ego_right)) {
            if r < g.y && g.y < l {
                return LaneClass::DirectDrivable;
            }
        }
        let (mut left, mut right) = (false, false);
        for line in &self.lines {
            if let Some(y) = line.lateral_at(g.x) {
                left |= y > g.y;
                right |= y < g.y;
            }
        }
        if left && right {
            LaneClass::AlternativeDrivable
        } else {
            LaneClass::NonLane
        }
    }
}

/// Ground point (z = 0 world plane) seen through pixel `(u, v)`, expressed
/// in the body frame, if within `max_depth` meters ahead.
fn ground_hit(
    rig: &CameraRig,
    truth: &Pose6D,
    u: f64,
    v: f64,
    max_depth: f64,
) -> Option<Vector2<f64>> {
    let k = &rig.intrinsics;
    let ray_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    let cam = rig.camera_pose(truth);
    let dir = cam.rotation * ray_cam;
    let origin = cam.translation;
    if dir.z >= -1e-12 {
        return None;
    }
    let t = -origin.z / dir.z;
    let body = truth.inverse_transform_point(&(origin + dir * t));
    (body.x > 0.0 && body.x <= max_depth).then(|| body.xy())
}

/// Liang-Barsky clip of segment `a→b` to `[lo, hi]²` per axis.
fn clip_segment(
    a: Vector2<f64>,
    b: Vector2<f64>,
    lo: Vector2<f64>,
    hi: Vector2<f64>,
) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d.x, a.x - lo.x),
        (d.x, hi.x - a.x),
        (-d.y, a.y - lo.y),
        (d.y, hi.y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then(|| (a + d * t0, a + d * t1))
}

fn draw_line(mask: &mut Raster<bool>, a: Vector2<f64>, b: Vector2<f64>) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let lo = Vector2::new(-0.5, -0.5);
    let hi = Vector2::new(w as f64 - 0.5, h as f64 - 0.5);
    let Some((a, b)) = clip_segment(a, b, lo, hi) else {
        return;
    };
    let d = b - a;
    let mut plot = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            mask[(x as usize, y as usize)] = true;
        }
    };
    // Step the major axis one pixel at a time and mark the pixels on both
    // sides of the exact minor coordinate.
    if d.x.abs() >= d.y.abs() {
        let (s, e) = if a.x <= b.x { (a, b) } else { (b, a) };
        if d.x == 0.0 {
            plot(s.x.round() as i64, s.y.round() as i64);
            return;
        }
        for x in (s.x.round() as i64)..=(e.x.round() as i64) {
            let y = s.y + (x as f64 - s.x) * d.y / d.x;
            plot(x, y.floor() as i64);
            plot(x, y.ceil() as i64);
        }
    } else {
        let (s, e) = if a.y <= b.y { (a, b) } else { (b, a) };
        for y in (s.y.round() as i64)..=(e.y.round() as i64) {
            let x = s.x + (y as f64 - s.y) * d.x / d.y;
            plot(x.floor() as i64, y);
            plot(x.ceil() as i64, y);
        }
    }
}

/// Draws a world polyline into `mask`, clipped to camera depths
/// `[DRAW_NEAR, far]`.
fn draw_polyline(
    mask: &mut Raster<bool>,
    rig: &CameraRig,
    truth: &Pose6D,
    points: &[Vector3<f64>],
    far: f64,
) {
    for w in points.windows(2) {
        let a = rig.world_to_camera(truth, &w[0]);
        let b = rig.world_to_camera(truth, &w[1]);
        let Some((a, b)) = clip_depth(a, b, DRAW_NEAR, far) else {
            continue;
        };
        let (Ok(pa), Ok(pb)) = (rig.intrinsics.project(&a), rig.intrinsics.project(&b)) else {
            continue;
        };
        draw_line(mask, pa, pb);
    }
}

fn clip_depth(
    a: Vector3<f64>,
    b: Vector3<f64>,
    near: f64,
    far: f64,
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let dz = b.z - a.z;
    for (p, q) in [(-dz, a.z - near), (dz, far - a.z)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else if p < 0.0 {
            t0 = t0.max(q / p);
        } else {
            t1 = t1.min(q / p);
        }
    }
    (t0 <= t1).then(|| (a + (b - a) * t0, a + (b - a) * t1))
}

/// Polyline shifted sideways by `offset` meters (left positive) in the
/// ground plane.
fn offset_polyline(points: &[Vector3<f64>], offset: f64) -> Vec<Vector3<f64>> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let prev = points[i.saturating_sub(1)];
            let next = points[(i + 1).min(n - 1)];
            let dir = (next - prev).xy();
            let norm = dir.norm();
            if norm == 0.0 {
                return points[i];
            }
            let left = Vector2::new(-dir.y, dir.x) / norm;
            points[i] + Vector3::new(left.x, left.y, 0.0) * offset
        })
        .collect()
}

/// Evidence weights for `class`: all evidence goes to the argmax of the
/// one-hot vector plus Gaussian noise, so noise flips labels without
/// changing the evidence level.
fn class_weights(class: LaneClass, sd: f64, rng: &mut ChaCha8Rng) -> [f64; NUM_CLASSES] {
    let mut score = [0.0; NUM_CLASSES];
    score[class as usize] = 1.0;
    if sd > 0.0 {
        let normal = Normal::new(0.0, sd).expect("finite sd");
        for s in &mut score {
            *s += normal.sample(rng);
        }
    }
    let winner = (0..NUM_CLASSES)
        .max_by(|&a, &b| score[a].total_cmp(&score[b]))
        .expect("classes");
    let mut w = [0.0; NUM_CLASSES];
    w[winner] = 1.0;
    w
}

/// Renders perception output for a vehicle at `truth`. Deterministic in
/// `noise.rng_seed`.
pub fn render_scene(
    map: &SemanticMap,
    truth: &Pose6D,
    rig: &CameraRig,
    noise: &NoiseProfile,
) -> SceneRender {
    let cam = &rig.intrinsics;
    let (w, h) = (cam.width, cam.height);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let layout = LaneLayout::new(map, truth);

    let classes = Raster::from_fn(w, h, |x, y| {
        ground_hit(rig, truth, x as f64, y as f64, noise.render_depth)
            .map_or(LaneClass::NonLane, |g| layout.classify(&g))
    });

    let mut border_line = Raster::filled(w, h, false);
    for b in &map.lane_borders {
        draw_polyline(&mut border_line, rig, truth, &b.points, noise.render_depth);
    }
    let border_dist = distance_field(&border_line).map(|f| f.distance).ok();

    let mut phantom = Raster::filled(w, h, false);
    for b in &map.lane_borders {
        for &off in &noise.phantom_offsets_m {
            draw_polyline(
                &mut phantom,
                rig,
                truth,
                &offset_polyline(&b.points, off),
                noise.render_depth,
            );
        }
    }
    let phantom_dist = distance_field(&phantom).map(|f| f.distance).ok();

    // Line pixels on the outer edge of the road adopt the adjacent
    // drivable class so every border reads as a lane pixel.
    let rendered_class = Raster::from_fn(w, h, |x, y| {
        let c = classes[(x, y)];
        if !border_line[(x, y)] || c.is_drivable() {
            return c;
        }
        for dx in 1..=2usize {
            for nx in [x.checked_sub(dx), Some(x + dx).filter(|&n| n < w)]
                .into_iter()
                .flatten()
            {
                if classes[(nx, y)].is_drivable() {
                    return classes[(nx, y)];
                }
            }
        }
        c
    });

    let peak = noise.border_alpha_peak - 1.0;
    let mut dirichlet = DirichletRaster::vacuous(w, h, NUM_CLASSES);
    for y in 0..h {
        for x in 0..w {
            let d = border_dist.as_ref().map_or(f64::INFINITY, |r| r[(x, y)]);
            let is_phantom = phantom_dist.as_ref().is_some_and(|r| r[(x, y)] <= 1.0) && d > 1.0;
            let class = rendered_class[(x, y)];
            let weights = class_weights(class, noise.class_noise_sd, &mut rng);
            if is_phantom && class.is_drivable() {
                let e = noise.phantom_evidence;
                dirichlet.set_pixel(x, y, &[1.0 + e, 1.0 + e, 1.0 + 2.0 * e]);
                continue;
            }
            let t = if noise.border_width_px > 0.0 {
                (d / noise.border_width_px).min(1.0)
            } else {
                1.0
            };
            let evidence = peak + (noise.region_evidence - peak) * t;
            let alpha = weights.map(|wi| 1.0 + evidence * wi);
            dirichlet.set_pixel(x, y, &alpha);
        }
    }
    for r in &noise.occlusion_rects {
        for y in r.y0..r.y1.min(h) {
            for x in r.x0..r.x1.min(w) {
                dirichlet.set_pixel(x, y, &[1.0; NUM_CLASSES]);
            }
        }
    }

    let (detections, boxes, light_ids) = render_detections(map, truth, rig, noise, &mut rng);
    SceneRender {
        dirichlet,
        detections,
        truth_pose: *truth,
        labels: SceneLabels {
            classes,
            border_line,
            boxes,
            light_ids,
        },
    }
}

/// Exact image box of a light housing centered at camera point `xc`.
pub fn light_box(rig: &CameraRig, xc: &Vector3<f64>, half_size: [f64; 2]) -> Option<BoxCoords> {
    let uv = rig.intrinsics.project(xc).ok()?;
    let hw = rig.intrinsics.fx * half_size[0] / xc.z;
    let hh = rig.intrinsics.fy * half_size[1] / xc.z;
    Some([uv.x - hw, uv.y - hh, uv.x + hw, uv.y + hh])
}

fn render_detections(
    map: &SemanticMap,
    truth: &Pose6D,
    rig: &CameraRig,
    noise: &NoiseProfile,
    rng: &mut ChaCha8Rng,
) -> (Vec<NigDetection>, Vec<BoxCoords>, Vec<i64>) {
    let visible = visible_subset(map, truth, rig, noise.render_depth);
    let var = noise.edge_variance();
    let normal = Normal::new(0.0, noise.bbox_center_sd_px).expect("validated sd");
    let (mut dets, mut boxes, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for light in &visible.lights {
        let xc = rig.world_to_camera(truth, &light.position);
        let Some(exact) = light_box(rig, &xc, noise.light_half_size_m) else {
            continue;
        };
        let dropped = rng.random::<f64>() < noise.detect_dropout_prob;
        let noisy = exact.map(|e| e + normal.sample(rng));
        if dropped || noisy[0] >= noisy[2] || noisy[1] >= noisy[3] {
            continue;
        }
        let edges = noisy.map(|g| NigParams::with_aleatoric(g, var).expect("positive variance"));
        dets.push(NigDetection { edges });
        boxes.push(exact);
        ids.push(light.id);
    }
    (dets, boxes, ids)
}

pub const MIN_CALIBRATION_PIXELS: usize = 1000;
pub const MIN_CALIBRATION_BOXES: usize = 50;

/// Confidence/correctness pairs for every non-border pixel.
pub fn pixel_calibration_samples(render: &SceneRender) -> (Vec<f64>, Vec<bool>) {
    let conf = render.dirichlet.confidence();
    let argmax = render.dirichlet.argmax();
    let mut c = Vec::new();
    let mut ok = Vec::new();
    for (x, y, &truth) in render.labels.classes.iter_pixels() {
        if render.labels.border_line[(x, y)] {
            continue;
        }
        c.push(conf[(x, y)]);
        ok.push(argmax[(x, y)] == Some(truth as usize));
    }
    (c, ok)
}

/// Declared variance and squared error of every detected box edge.
pub fn box_calibration_samples(render: &SceneRender) -> (Vec<f64>, Vec<f64>) {
    let mut vars = Vec::new();
    let mut sq = Vec::new();
    for (det, exact) in render.detections.iter().zip(&render.labels.boxes) {
        for (e, t) in det.edges.iter().zip(exact) {
            vars.push(e.aleatoric());
            sq.push((e.gamma - t).powi(2));
        }
    }
    (vars, sq)
}

/// ECE of the pixel classes and ENCE of the box edges, pooled over all
/// renders and scored against their own labels.
pub fn calibration_fidelity(renders: &[SceneRender]) -> Result<(f64, f64), PerceptionError> {
    let (mut conf, mut correct, mut vars, mut sq) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut n_boxes = 0;
    for r in renders {
        let (c, ok) = pixel_calibration_samples(r);
        conf.extend(c);
        correct.extend(ok);
        let (v, s) = box_calibration_samples(r);
        vars.extend(v);
        sq.extend(s);
        n_boxes += r.detections.len();
    }
    if conf.len() < MIN_CALIBRATION_PIXELS {
        return Err(PerceptionError::InsufficientSamples {
            what: "pixels",
            needed: MIN_CALIBRATION_PIXELS,
            got: conf.len(),
        });
    }
    if n_boxes < MIN_CALIBRATION_BOXES {
        return Err(PerceptionError::InsufficientSamples {
            what: "boxes",
            needed: MIN_CALIBRATION_BOXES,
            got: n_boxes,
        });
    }
    Ok((
        ece(&conf, &correct, DEFAULT_BINS)?,
        ence(&vars, &sq, DEFAULT_BINS)?,
    ))
}
