//! Planar grasp poses, rotated rectangles, the IoU/angle correctness
//! criterion, and quality-map decoding.
//!
//! Pixel convention, used everywhere in this crate: x is the column
//! index, y is the row index, origin at the top-left.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::tensor::{Tensor, TensorError};

const HALF_PI: f64 = PI / 2.0;

#[derive(Debug, Clone, PartialEq)]
pub enum GraspError {
    /// A pose field outside its documented range.
    InvalidPose { field: &'static str },
    /// Rectangle corners that are not a convex counter-clockwise cycle.
    BadRectangle { reason: &'static str },
    /// Map shapes disagree or are not rank 2.
    Shape(TensorError),
    /// A map value outside its documented range.
    MapOutOfRange { what: &'static str },
    /// The operation needs a non-empty collection.
    Empty { what: &'static str },
    /// top_k must be at least 1.
    ZeroTopK,
}

impl fmt::Display for GraspError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraspError::InvalidPose { field } => write!(f, "invalid grasp pose field: {field}"),
            GraspError::BadRectangle { reason } => write!(f, "bad rectangle: {reason}"),
            GraspError::Shape(e) => write!(f, "shape error: {e}"),
            GraspError::MapOutOfRange { what } => write!(f, "{what} outside its valid range"),
            GraspError::Empty { what } => write!(f, "{what} must be non-empty"),
            GraspError::ZeroTopK => write!(f, "top_k must be >= 1"),
        }
    }
}

impl core::error::Error for GraspError {}

impl From<TensorError> for GraspError {
    fn from(e: TensorError) -> Self {
        GraspError::Shape(e)
    }
}

/// Planar grasp pose g = (x, y, θ, w, q).
///
/// Center in pixels, rotation in radians within [−π/2, π/2], jaw opening
/// in pixels, quality score in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub width: f64,
    pub quality: f64,
}

impl GraspPose {
    pub fn new(x: f64, y: f64, theta: f64, width: f64, quality: f64) -> Result<Self, GraspError> {
        if !x.is_finite() || !y.is_finite() {
            return Err(GraspError::InvalidPose { field: "center" });
        }
        if !((-HALF_PI..=HALF_PI).contains(&theta)) {
            return Err(GraspError::InvalidPose { field: "theta" });
        }
        if !(width >= 0.0) || !width.is_finite() {
            return Err(GraspError::InvalidPose { field: "width" });
        }
        if !((0.0..=1.0).contains(&quality)) {
            return Err(GraspError::InvalidPose { field: "quality" });
        }
        Ok(Self {
            x,
            y,
            theta,
            width,
            quality,
        })
    }

    /// Total order used wherever grasp candidates are ranked: quality
    /// descending, ties by lower (y, x), then (θ, w) for full determinism.
    pub fn rank_cmp(a: &GraspPose, b: &GraspPose) -> core::cmp::Ordering {
        b.quality
            .total_cmp(&a.quality)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.theta.total_cmp(&b.theta))
            .then(a.width.total_cmp(&b.width))
    }
}

/// Convex quadrilateral with counter-clockwise vertices (positive shoelace
/// area in (x, y) coordinates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedRect {
    pub corners: [[f64; 2]; 4],
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn shoelace(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = points[i];
        let [x1, y1] = points[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

impl RotatedRect {
    /// Validate a counter-clockwise convex quadrilateral. Zero-area
    /// (degenerate) rectangles are allowed; clockwise or non-convex input
    /// is rejected.
    pub fn from_corners(corners: [[f64; 2]; 4]) -> Result<Self, GraspError> {
        if corners.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GraspError::BadRectangle {
                reason: "non-finite corner",
            });
        }
        let area = shoelace(&corners);
        if area < 0.0 {
            return Err(GraspError::BadRectangle {
                reason: "clockwise vertex order",
            });
        }
        for i in 0..4 {
            let c = cross(corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]);
            if c < -1e-12 {
                return Err(GraspError::BadRectangle {
                    reason: "not convex",
                });
            }
        }
        Ok(Self { corners })
    }

    pub fn area(&self) -> f64 {
        shoelace(&self.corners)
    }

    pub fn center(&self) -> [f64; 2] {
        let mut cx = 0.0;
        let mut cy = 0.0;
        for c in &self.corners {
            cx += c[0];
            cy += c[1];
        }
        [cx / 4.0, cy / 4.0]
    }
}

/// Realize a grasp pose as its rectangle: extent `width` along the θ
/// direction and `width · height_ratio` across it.
pub fn pose_to_rect(pose: &GraspPose, height_ratio: f64) -> Result<RotatedRect, GraspError> {
    if !(height_ratio > 0.0) {
        return Err(GraspError::BadRectangle {
            reason: "height_ratio must be positive",
        });
    }
    let hw = pose.width / 2.0;
    let hh = pose.width * height_ratio / 2.0;
    let (s, c) = (libm::sin(pose.theta), libm::cos(pose.theta));
    let u = [c * hw, s * hw];
    let v = [-s * hh, c * hh];
    let p = [pose.x, pose.y];
    RotatedRect::from_corners([
        [p[0] - u[0] - v[0], p[1] - u[1] - v[1]],
        [p[0] + u[0] - v[0], p[1] + u[1] - v[1]],
        [p[0] + u[0] + v[0], p[1] + u[1] + v[1]],
        [p[0] - u[0] + v[0], p[1] - u[1] + v[1]],
    ])
}

/// Sutherland–Hodgman clip of a convex subject polygon against a convex
/// counter-clockwise clip polygon.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]; 4]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..4 {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % 4];
        let input = output;
        output = Vec::with_capacity(input.len() + 2);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            // inside = left of (or on) the directed clip edge a→b
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(edge_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(edge_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn edge_intersection(p0: [f64; 2], p1: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let d = [p1[0] - p0[0], p1[1] - p0[1]];
    let e = [b[0] - a[0], b[1] - a[1]];
    let denom = d[0] * e[1] - d[1] * e[0];
    if denom == 0.0 {
        return p0;
    }
    let t = ((a[0] - p0[0]) * e[1] - (a[1] - p0[1]) * e[0]) / denom;
    [p0[0] + t * d[0], p0[1] + t * d[1]]
}

/// Intersection-over-union of two convex rectangles via polygon clipping
/// and shoelace areas. Returns 0 when both areas are zero.
pub fn rect_iou(a: &RotatedRect, b: &RotatedRect) -> f64 {
    let area_a = a.area();
    let area_b = b.area();
    if area_a == 0.0 && area_b == 0.0 {
        return 0.0;
    }
    let clipped = clip_convex(&a.corners, &b.corners);
    let inter = shoelace(&clipped).max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Minimal absolute angle difference modulo π, in [0, π/2].
///
/// A grasp rectangle is invariant under a half-turn, so θ and θ ± π
/// describe the same jaw axis. Differences already at or below π/2 are
/// returned exactly, without a wrapping round trip.
pub fn angle_delta(t1: f64, t2: f64) -> f64 {
    let direct = (t1 - t2).abs();
    if direct <= HALF_PI {
        return direct;
    }
    let mut d = libm::fmod(t1 - t2, PI);
    if d < 0.0 {
        d += PI;
    }
    d.min(PI - d)
}

/// A ground-truth grasp rectangle with its jaw angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthRect {
    pub rect: RotatedRect,
    pub angle: f64,
}

/// Correctness thresholds. Both comparisons follow the evaluation
/// convention exactly: the angle difference may not exceed the angle
/// threshold (equality passes), and the IoU must be strictly greater than
/// the IoU threshold (equality fails).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspThresholds {
    pub iou: f64,
    /// Angle gate in radians.
    pub angle: f64,
    /// Ratio of rectangle height to jaw width when realizing a pose.
    pub height_ratio: f64,
}

impl GraspThresholds {
    pub const DEFAULT_IOU: f64 = 0.25;
    pub const DEFAULT_ANGLE_DEG: f64 = 30.0;
    pub const DEFAULT_HEIGHT_RATIO: f64 = 0.5;

    pub fn with_angle_degrees(iou: f64, angle_deg: f64, height_ratio: f64) -> Self {
        Self {
            iou,
            angle: deg_to_rad(angle_deg),
            height_ratio,
        }
    }
}

impl Default for GraspThresholds {
    fn default() -> Self {
        Self::with_angle_degrees(
            Self::DEFAULT_IOU,
            Self::DEFAULT_ANGLE_DEG,
            Self::DEFAULT_HEIGHT_RATIO,
        )
    }
}

/// Degrees → radians, the single conversion used across the crate so CLI
/// flags and defaults agree bit-for-bit.
pub fn deg_to_rad(deg: f64) -> f64 {
    deg * (PI / 180.0)
}

/// Whether a predicted pose is correct against any ground-truth rectangle:
/// angle difference within the gate AND IoU strictly above the threshold.
pub fn grasp_correct(
    pred: &GraspPose,
    gts: &[GroundTruthRect],
    thresholds: &GraspThresholds,
) -> Result<bool, GraspError> {
    if gts.is_empty() {
        return Err(GraspError::Empty {
            what: "ground truth",
        });
    }
    let pred_rect = pose_to_rect(pred, thresholds.height_ratio)?;
    for gt in gts {
        if angle_delta(pred.theta, gt.angle) > thresholds.angle {
            continue;
        }
        if rect_iou(&pred_rect, &gt.rect) > thresholds.iou {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Fraction of scenes whose top prediction is correct: `Acc = N_c / N_gt`
/// with `N_gt` counted as scenes.
pub fn accuracy(
    predictions: &[GraspPose],
    ground_truths: &[Vec<GroundTruthRect>],
    thresholds: &GraspThresholds,
) -> Result<f64, GraspError> {
    if predictions.is_empty() {
        return Err(GraspError::Empty { what: "dataset" });
    }
    if predictions.len() != ground_truths.len() {
        return Err(GraspError::Shape(TensorError::LengthMismatch {
            expected: predictions.len(),
            got: ground_truths.len(),
        }));
    }
    let mut correct = 0usize;
    for (pred, gts) in predictions.iter().zip(ground_truths) {
        if grasp_correct(pred, gts, thresholds)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / predictions.len() as f64)
}

/// Per-pixel grasp maps: quality in [0, 1], angle in [−π/2, π/2], width in
/// pixels. `width_scale` multiplies raw width values before clamping to
/// [0, w_max].
#[derive(Debug, Clone, PartialEq)]
pub struct GraspMaps {
    quality: Tensor,
    angle: Tensor,
    width: Tensor,
    w_max: f64,
    width_scale: f64,
}

impl GraspMaps {
    pub fn new(
        quality: Tensor,
        angle: Tensor,
        width: Tensor,
        w_max: f64,
        width_scale: f64,
    ) -> Result<Self, GraspError> {
        quality.dims2()?;
        angle.expect_shape(quality.shape())?;
        width.expect_shape(quality.shape())?;
        if quality.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(GraspError::MapOutOfRange {
                what: "quality map",
            });
        }
        if angle
            .data()
            .iter()
            .any(|&v| !((-HALF_PI..=HALF_PI).contains(&v)))
        {
            return Err(GraspError::MapOutOfRange { what: "angle map" });
        }
        if !(w_max >= 0.0) || !w_max.is_finite() {
            return Err(GraspError::MapOutOfRange { what: "w_max" });
        }
        if !width_scale.is_finite() {
            return Err(GraspError::MapOutOfRange {
                what: "width_scale",
            });
        }
        Ok(Self {
            quality,
            angle,
            width,
            w_max,
            width_scale,
        })
    }

    pub fn quality(&self) -> &Tensor {
        &self.quality
    }

    pub fn angle(&self) -> &Tensor {
        &self.angle
    }

    pub fn width(&self) -> &Tensor {
        &self.width
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    pub fn width_scale(&self) -> f64 {
        self.width_scale
    }

    /// Optional preprocessing for noisy inputs: box-blur the quality map
    /// with a (2r+1)² window clamped at the borders. Angle and width maps
    /// are left untouched; decoding stays deterministic either way, so
    /// this is off unless explicitly requested.
    pub fn with_blurred_quality(&self, radius: usize) -> Result<Self, GraspError> {
        if radius == 0 {
            return Ok(self.clone());
        }
        let (h, w) = self.quality.dims2()?;
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let y0 = y.saturating_sub(radius);
                let y1 = (y + radius).min(h - 1);
                let x0 = x.saturating_sub(radius);
                let x1 = (x + radius).min(w - 1);
                let mut sum = 0.0;
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        sum += self.quality.at2(yy, xx);
                    }
                }
                data.push(sum / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64);
            }
        }
        Self::new(
            Tensor::new(&[h, w], data)?,
            self.angle.clone(),
            self.width.clone(),
            self.w_max,
            self.width_scale,
        )
    }
}

/// Peak pixels of the quality map: local maxima over 3×3 neighborhoods.
///
/// An equal-valued connected plateau (8-connectivity) counts as one peak
/// and contributes its lowest row-major pixel; a plateau touching any
/// strictly greater neighbor contributes nothing.
fn quality_peaks(quality: &Tensor) -> Vec<(usize, usize)> {
    let (h, w) = quality.dims2().expect("validated rank-2 map");
    let idx = |y: usize, x: usize| y * w + x;
    let mut visited = vec![false; h * w];
    let mut peaks = Vec::new();
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut component: Vec<(usize, usize)> = Vec::new();

    for sy in 0..h {
        for sx in 0..w {
            if visited[idx(sy, sx)] {
                continue;
            }
            let value = quality.at2(sy, sx);
            visited[idx(sy, sx)] = true;
            stack.clear();
            component.clear();
            stack.push((sy, sx));
            component.push((sy, sx));
            let mut is_peak = true;
            while let Some((y, x)) = stack.pop() {
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let ny = y as isize + dy;
                        let nx = x as isize + dx;
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        let nv = quality.at2(ny, nx);
                        if nv > value {
                            is_peak = false;
                        } else if nv == value && !visited[idx(ny, nx)] {
                            visited[idx(ny, nx)] = true;
                            stack.push((ny, nx));
                            component.push((ny, nx));
                        }
                    }
                }
            }
            if is_peak {
                // lowest row-major pixel of the plateau
                let best = component
                    .iter()
                    .copied()
                    .min_by_key(|&(y, x)| (y, x))
                    .expect("non-empty component");
                peaks.push(best);
            }
        }
    }
    peaks
}

/// Decode grasp maps into up to `top_k` poses, sorted by quality
/// descending with ties broken by lower (y, x).
pub fn decode_grasp_maps(maps: &GraspMaps, top_k: usize) -> Result<Vec<GraspPose>, GraspError> {
    if top_k == 0 {
        return Err(GraspError::ZeroTopK);
    }
    let mut poses: Vec<GraspPose> = quality_peaks(&maps.quality)
        .into_iter()
        .map(|(y, x)| {
            let width = (maps.width.at2(y, x) * maps.width_scale).clamp(0.0, maps.w_max);
            GraspPose::new(
                x as f64,
                y as f64,
                maps.angle.at2(y, x),
                width,
                maps.quality.at2(y, x),
            )
        })
        .collect::<Result<_, _>>()?;
    poses.sort_by(GraspPose::rank_cmp);
    poses.truncate(top_k);
    Ok(poses)
}
