//! Dataset-level grasp evaluation: Acc = N_c / N_gt with N_gt counted as
//! scenes, one top prediction per scene.
//!
//! Scenes are scored independently (optionally in parallel); the report is
//! an ordered reduction over scene index, so the output never depends on
//! scene order in the aggregate counts, thread count, or map iteration
//! order.

use std::collections::BTreeMap;

use graspfusion_core::grasp::{decode_grasp_maps, grasp_correct, GraspPose, GraspThresholds};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{Scene, ScenePayload, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty scene list")]
    Empty,
    #[error("scene {index} has no ground truth")]
    MissingGroundTruth { index: usize },
    #[error("scene {index}: {source}")]
    Grasp {
        index: usize,
        source: graspfusion_core::grasp::GraspError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    pub thresholds: GraspThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub scenes: usize,
    pub correct: usize,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsDto {
    pub iou: f64,
    pub angle_rad: f64,
}

/// The stable evaluation report. `n_gt_semantics` documents that the
/// accuracy denominator counts scenes (one top prediction each), not
/// individual ground-truth rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub acc: f64,
    pub n_scenes: usize,
    pub n_correct: usize,
    pub n_gt_semantics: String,
    pub per_category: BTreeMap<String, CategoryStats>,
    pub thresholds: ThresholdsDto,
    pub height_ratio: f64,
    pub tie_break: String,
}

struct SceneOutcome {
    correct: bool,
    per_category: Vec<(String, bool)>,
}

/// The scene's top prediction: decoded peak for map scenes, ranking
/// maximum for candidate scenes.
pub fn top_prediction(scene: &Scene) -> Result<GraspPose, graspfusion_core::grasp::GraspError> {
    match &scene.payload {
        ScenePayload::Candidates(cands) => Ok(*cands
            .iter()
            .min_by(|a, b| GraspPose::rank_cmp(a, b))
            .expect("validated scenes carry at least one candidate")),
        ScenePayload::Maps(maps) => Ok(decode_grasp_maps(maps, 1)?[0]),
    }
}

fn evaluate_scene(
    index: usize,
    scene: &Scene,
    opts: &EvalOptions,
) -> Result<SceneOutcome, EvalError> {
    if scene.ground_truth.is_empty() {
        return Err(EvalError::MissingGroundTruth { index });
    }
    let pred = top_prediction(scene).map_err(|source| EvalError::Grasp { index, source })?;
    let all: Vec<_> = scene
        .ground_truth
        .values()
        .flat_map(|v| v.iter().copied())
        .collect();
    let correct = grasp_correct(&pred, &all, &opts.thresholds)
        .map_err(|source| EvalError::Grasp { index, source })?;
    let mut per_category = Vec::with_capacity(scene.ground_truth.len());
    for (label, gts) in &scene.ground_truth {
        let ok = grasp_correct(&pred, gts, &opts.thresholds)
            .map_err(|source| EvalError::Grasp { index, source })?;
        per_category.push((label.clone(), ok));
    }
    Ok(SceneOutcome {
        correct,
        per_category,
    })
}

/// Evaluate every scene and aggregate. Runs on the current rayon pool;
/// results are collected in scene order before aggregation, so the report
/// is identical for any thread count.
pub fn evaluate_dataset(scenes: &[Scene], opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    if scenes.is_empty() {
        return Err(EvalError::Empty);
    }
    let outcomes: Vec<SceneOutcome> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| evaluate_scene(i, s, opts))
        .collect::<Result<_, _>>()?;

    let mut n_correct = 0usize;
    let mut per_category: BTreeMap<String, CategoryStats> = BTreeMap::new();
    for outcome in &outcomes {
        if outcome.correct {
            n_correct += 1;
        }
        for (label, ok) in &outcome.per_category {
            let entry = per_category.entry(label.clone()).or_insert(CategoryStats {
                scenes: 0,
                correct: 0,
                acc: 0.0,
            });
            entry.scenes += 1;
            if *ok {
                entry.correct += 1;
            }
        }
    }
    for stats in per_category.values_mut() {
        stats.acc = stats.correct as f64 / stats.scenes as f64;
    }
    Ok(EvalReport {
        format_version: FORMAT_VERSION,
        acc: n_correct as f64 / scenes.len() as f64,
        n_scenes: scenes.len(),
        n_correct,
        n_gt_semantics: "scenes".to_string(),
        per_category,
        thresholds: ThresholdsDto {
            iou: opts.thresholds.iou,
            angle_rad: opts.thresholds.angle,
        },
        height_ratio: opts.thresholds.height_ratio,
        tie_break: "quality desc, then (y, x, theta, width) asc".to_string(),
    })
}
