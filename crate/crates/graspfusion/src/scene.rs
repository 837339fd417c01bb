//! Deterministic synthetic scene generation.
//!
//! One seed, one scene, bit for bit: the PRNG is ChaCha8 seeded with the
//! scene seed, every draw happens in a fixed order, and candidate
//! qualities come from a grid of distinct rationals so the in-box maximum
//! is always unique. When `plant_correct_gt` is set, the target category's
//! ground truth is the planted pose's own rectangle (so the scene
//! evaluates as correct); otherwise the ground-truth angle is turned a
//! quarter turn away, which fails the angle gate no matter the overlap.

use std::collections::BTreeMap;
use std::collections::HashSet;

use graspfusion_core::dgbcm::{point_in_box, DetectionBox};
use graspfusion_core::frames::wrap_half_turn;
use graspfusion_core::grasp::{pose_to_rect, GraspPose, GroundTruthRect};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::formats::{ImageSize, Scene, ScenePayload, ScenesFile, FORMAT_VERSION};

/// Labels drawn from, in order, when generating scenes.
pub const LABEL_POOL: [&str; 8] = [
    "cup", "apple", "handset", "cola", "pear", "bottle", "remote", "orange",
];

const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("infeasible scene spec: {0}")]
    Infeasible(&'static str),
}

/// Counts and sizes for one generated scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    /// Categories, taken from the front of [`LABEL_POOL`].
    pub n_labels: usize,
    pub boxes_per_label: usize,
    pub n_candidates: usize,
    /// Put every candidate inside a target box (evaluation-style scenes
    /// where the global best and the in-box best coincide).
    pub all_candidates_in_target: bool,
    /// Target ground truth matches the planted grasp exactly; when false
    /// its angle is turned 90°, so the scene evaluates as incorrect.
    pub plant_correct_gt: bool,
    /// Rectangle height/width ratio used when realizing poses.
    pub height_ratio: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            n_labels: 3,
            boxes_per_label: 2,
            n_candidates: 8,
            all_candidates_in_target: false,
            plant_correct_gt: true,
            height_ratio: 0.5,
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<(), GenError> {
        if self.width < 100 || self.height < 100 {
            return Err(GenError::Infeasible("image must be at least 100x100"));
        }
        if self.n_labels == 0 || self.n_labels > LABEL_POOL.len() {
            return Err(GenError::Infeasible("n_labels outside the label pool"));
        }
        if self.boxes_per_label == 0 {
            return Err(GenError::Infeasible("boxes_per_label must be >= 1"));
        }
        if self.n_candidates == 0 {
            return Err(GenError::Infeasible("n_candidates must be >= 1"));
        }
        if self.n_candidates > 200_000 {
            return Err(GenError::Infeasible(
                "n_candidates exceeds the quality grid",
            ));
        }
        if !self.height_ratio.is_finite() || self.height_ratio <= 0.0 {
            return Err(GenError::Infeasible("height_ratio must be positive"));
        }
        Ok(())
    }
}

/// Distinct quality scores: n distinct draws from {0, …, 10⁶}/10⁶.
fn distinct_qualities(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: u32 = rng.random_range(0..=1_000_000);
        if seen.insert(v) {
            out.push(v as f64 / 1e6);
        }
    }
    out
}

/// Generate one scene. Identical seed and spec give an identical scene.
pub fn gen_synthetic_scene(seed: u64, spec: &SceneSpec) -> Result<Scene, GenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let margin_x = w * 0.05;
    let margin_y = h * 0.05;

    // 1. labeled boxes
    let labels: Vec<&str> = LABEL_POOL[..spec.n_labels].to_vec();
    let mut detections: Vec<DetectionBox> = Vec::new();
    for label in &labels {
        for _ in 0..spec.boxes_per_label {
            let bw = rng.random_range(0.12 * w..0.28 * w);
            let bh = rng.random_range(0.12 * h..0.28 * h);
            let x1 = rng.random_range(margin_x..(w - margin_x - bw));
            let y1 = rng.random_range(margin_y..(h - margin_y - bh));
            detections.push(DetectionBox {
                label: (*label).to_string(),
                score: rng.random_range(0.5..1.0),
                x1,
                y1,
                x2: x1 + bw,
                y2: y1 + bh,
            });
        }
    }

    // 2. target category
    let target = labels[rng.random_range(0..labels.len())];
    let target_boxes: Vec<DetectionBox> = detections
        .iter()
        .filter(|b| b.label == target)
        .cloned()
        .collect();

    // 3. candidates with distinct qualities; candidate 0 is always inside
    let qualities = distinct_qualities(&mut rng, spec.n_candidates);
    let mut candidates: Vec<GraspPose> = Vec::with_capacity(spec.n_candidates);
    for (i, &quality) in qualities.iter().enumerate() {
        let inside = spec.all_candidates_in_target || i == 0 || rng.random_bool(0.5);
        let (x, y) = if inside {
            let b = &target_boxes[rng.random_range(0..target_boxes.len())];
            (rng.random_range(b.x1..b.x2), rng.random_range(b.y1..b.y2))
        } else {
            (rng.random_range(0.0..w), rng.random_range(0.0..h))
        };
        let theta = rng.random_range(-HALF_PI..HALF_PI);
        let width = rng.random_range(8.0..24.0);
        candidates.push(
            GraspPose::new(x, y, theta, width, quality).expect("generated pose within ranges"),
        );
    }

    // 4. the planted answer: unique by distinct qualities
    let planted = *candidates
        .iter()
        .filter(|c| target_boxes.iter().any(|b| point_in_box(c.x, c.y, b)))
        .min_by(|a, b| GraspPose::rank_cmp(a, b))
        .expect("candidate 0 is inside a target box");

    // 5. ground truth per category
    let mut ground_truth: BTreeMap<String, Vec<GroundTruthRect>> = BTreeMap::new();
    for label in &labels {
        let gt = if *label == target {
            let rect = pose_to_rect(&planted, spec.height_ratio).expect("positive ratio");
            let angle = if spec.plant_correct_gt {
                planted.theta
            } else {
                wrap_half_turn(planted.theta + HALF_PI)
            };
            GroundTruthRect { rect, angle }
        } else {
            let width = rng.random_range(8.0..24.0);
            let cx = rng.random_range(0.15 * w..0.85 * w);
            let cy = rng.random_range(0.15 * h..0.85 * h);
            let theta = rng.random_range(-HALF_PI..HALF_PI);
            let pose = GraspPose::new(cx, cy, theta, width, 1.0).expect("generated pose");
            GroundTruthRect {
                rect: pose_to_rect(&pose, spec.height_ratio).expect("positive ratio"),
                angle: theta,
            }
        };
        ground_truth.insert((*label).to_string(), vec![gt]);
    }

    Ok(Scene {
        seed: Some(seed),
        image: ImageSize {
            width: spec.width,
            height: spec.height,
        },
        detections,
        payload: ScenePayload::Candidates(candidates),
        ground_truth,
        planted: Some((target.to_string(), planted)),
    })
}

/// Generate `count` scenes with seeds `seed`, `seed+1`, …; the last
/// `incorrect_last` scenes get a quarter-turned ground-truth angle so they
/// evaluate as incorrect.
pub fn gen_scenes_file(
    seed: u64,
    count: u64,
    spec: &SceneSpec,
    incorrect_last: u64,
) -> Result<ScenesFile, GenError> {
    if incorrect_last > count {
        return Err(GenError::Infeasible("incorrect_last exceeds count"));
    }
    let mut scenes = Vec::with_capacity(count as usize);
    for i in 0..count {
        let mut s = *spec;
        s.plant_correct_gt = i < count - incorrect_last;
        scenes.push(gen_synthetic_scene(seed + i, &s)?.to_dto());
    }
    Ok(ScenesFile {
        format_version: FORMAT_VERSION,
        prng: Some("chacha8".to_string()),
        scenes,
    })
}
