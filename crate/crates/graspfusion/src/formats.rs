//! Versioned JSON interchange formats and their conversions to core types.
//!
//! Every file the CLI reads or writes round-trips through these DTOs:
//! `load(dump(x)) == x`. All maps are `BTreeMap` and all floats serialize
//! with shortest round-trip representation, so outputs are byte-stable.

use std::collections::BTreeMap;

use graspfusion_core::dgbcm::DetectionBox;
use graspfusion_core::frames::{CameraIntrinsics, FrameError, HandEyePose};
use graspfusion_core::grasp::{GraspError, GraspMaps, GraspPose, GroundTruthRect, RotatedRect};
use graspfusion_core::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Version tag carried by every file format.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("scene must carry exactly one of grasp_candidates / grasp_maps")]
    PayloadChoice,
    #[error("{0} must be non-empty")]
    Empty(&'static str),
    #[error("{what} lies outside the image bounds")]
    OutOfBounds { what: String },
    #[error("invalid grasp pose: {0}")]
    Grasp(#[from] GraspError),
    #[error("invalid detection at index {index}: {reason}")]
    Detection { index: usize, reason: &'static str },
    #[error("invalid calibration: {0}")]
    Calibration(#[from] FrameError),
    #[error("invalid grasp maps: {0}")]
    Maps(String),
    #[error("planted_best is not the unique in-box quality maximum for its label")]
    PlantedMismatch,
    #[error("planted_best requires grasp_candidates")]
    PlantedWithoutCandidates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDto {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDto {
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoxDto,
}

impl DetectionDto {
    pub fn to_core(&self) -> DetectionBox {
        DetectionBox {
            label: self.label.clone(),
            score: self.score,
            x1: self.bbox.x1,
            y1: self.bbox.y1,
            x2: self.bbox.x2,
            y2: self.bbox.y2,
        }
    }

    pub fn from_core(b: &DetectionBox) -> Self {
        Self {
            label: b.label.clone(),
            score: b.score,
            bbox: BoxDto {
                x1: b.x1,
                y1: b.y1,
                x2: b.x2,
                y2: b.y2,
            },
        }
    }
}

/// `{"format_version":1, "image":{...}, "detections":[...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub format_version: u32,
    pub image: ImageSize,
    pub detections: Vec<DetectionDto>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspDto {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub width: f64,
    pub quality: f64,
}

impl GraspDto {
    pub fn to_core(&self) -> Result<GraspPose, GraspError> {
        GraspPose::new(self.x, self.y, self.theta, self.width, self.quality)
    }

    pub fn from_core(g: &GraspPose) -> Self {
        Self {
            x: g.x,
            y: g.y,
            theta: g.theta,
            width: g.width,
            quality: g.quality,
        }
    }
}

/// `{"format_version":1, "grasps":[...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspsFile {
    pub format_version: u32,
    pub grasps: Vec<GraspDto>,
}

/// Calibration file: pinhole intrinsics plus the 16-element row-major
/// hand-eye matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "T_rc")]
    pub t_rc: [f64; 16],
}

impl CalibrationFile {
    pub fn to_core(&self) -> Result<(CameraIntrinsics, HandEyePose), FrameError> {
        Ok((
            CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy)?,
            HandEyePose::from_matrix(&self.t_rc)?,
        ))
    }

    pub fn from_core(cam: &CameraIntrinsics, pose: &HandEyePose) -> Self {
        Self {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            t_rc: pose.to_matrix(),
        }
    }
}

/// Row-major quality / angle / width planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspMapsDto {
    pub height: usize,
    pub width: usize,
    pub quality: Vec<f64>,
    pub angle: Vec<f64>,
    pub width_map: Vec<f64>,
    pub w_max: f64,
    pub width_scale: f64,
}

impl GraspMapsDto {
    pub fn to_core(&self) -> Result<GraspMaps, FormatError> {
        let shape = [self.height, self.width];
        let make = |name: &str, data: &[f64]| {
            Tensor::new(&shape, data.to_vec())
                .map_err(|e| FormatError::Maps(format!("{name}: {e}")))
        };
        GraspMaps::new(
            make("quality", &self.quality)?,
            make("angle", &self.angle)?,
            make("width_map", &self.width_map)?,
            self.w_max,
            self.width_scale,
        )
        .map_err(|e| FormatError::Maps(e.to_string()))
    }

    pub fn from_core(maps: &GraspMaps) -> Self {
        let (h, w) = maps.quality().dims2().expect("rank-2 maps");
        Self {
            height: h,
            width: w,
            quality: maps.quality().data().to_vec(),
            angle: maps.angle().data().to_vec(),
            width_map: maps.width().data().to_vec(),
            w_max: maps.w_max(),
            width_scale: maps.width_scale(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRectDto {
    pub corners: [[f64; 2]; 4],
    pub angle: f64,
}

impl GtRectDto {
    pub fn to_core(&self) -> Result<GroundTruthRect, GraspError> {
        Ok(GroundTruthRect {
            rect: RotatedRect::from_corners(self.corners)?,
            angle: self.angle,
        })
    }

    pub fn from_core(gt: &GroundTruthRect) -> Self {
        Self {
            corners: gt.rect.corners,
            angle: gt.angle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDto {
    pub label: String,
    pub grasp: GraspDto,
}

/// One serialized scene: detections plus either explicit grasp candidates
/// or grasp maps, with per-category ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDto {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub image: ImageSize,
    pub detections: Vec<DetectionDto>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grasp_candidates: Option<Vec<GraspDto>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grasp_maps: Option<GraspMapsDto>,
    pub ground_truth: BTreeMap<String, Vec<GtRectDto>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planted_best: Option<PlantedDto>,
}

/// `{"format_version":1, "scenes":[...]}`. Generated files also name the
/// PRNG so a scenario can be reproduced from its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenesFile {
    pub format_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prng: Option<String>,
    pub scenes: Vec<SceneDto>,
}

/// Grasp source of a validated scene.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenePayload {
    Candidates(Vec<GraspPose>),
    Maps(GraspMaps),
}

/// A scene after validation: all coordinates inside the image, the
/// payload choice resolved, and `planted_best` verified against the
/// candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: Option<u64>,
    pub image: ImageSize,
    pub detections: Vec<DetectionBox>,
    pub payload: ScenePayload,
    pub ground_truth: BTreeMap<String, Vec<GroundTruthRect>>,
    pub planted: Option<(String, GraspPose)>,
}

fn in_bounds(x: f64, y: f64, image: &ImageSize) -> bool {
    (0.0..=image.width as f64).contains(&x) && (0.0..=image.height as f64).contains(&y)
}

impl Scene {
    pub fn from_dto(dto: &SceneDto) -> Result<Self, FormatError> {
        let image = dto.image;
        let mut detections = Vec::with_capacity(dto.detections.len());
        for (index, d) in dto.detections.iter().enumerate() {
            let b = d.to_core();
            b.validate()
                .map_err(|reason| FormatError::Detection { index, reason })?;
            if !in_bounds(b.x1, b.y1, &image) || !in_bounds(b.x2, b.y2, &image) {
                return Err(FormatError::OutOfBounds {
                    what: format!("detection box {index}"),
                });
            }
            detections.push(b);
        }

        let payload = match (&dto.grasp_candidates, &dto.grasp_maps) {
            (Some(cands), None) => {
                if cands.is_empty() {
                    return Err(FormatError::Empty("grasp_candidates"));
                }
                let mut poses = Vec::with_capacity(cands.len());
                for (i, c) in cands.iter().enumerate() {
                    let pose = c.to_core()?;
                    if !in_bounds(pose.x, pose.y, &image) {
                        return Err(FormatError::OutOfBounds {
                            what: format!("grasp candidate {i}"),
                        });
                    }
                    poses.push(pose);
                }
                ScenePayload::Candidates(poses)
            }
            (None, Some(maps)) => ScenePayload::Maps(maps.to_core()?),
            _ => return Err(FormatError::PayloadChoice),
        };

        let mut ground_truth = BTreeMap::new();
        for (label, rects) in &dto.ground_truth {
            if rects.is_empty() {
                return Err(FormatError::Empty("ground_truth category"));
            }
            let mut out = Vec::with_capacity(rects.len());
            for (i, r) in rects.iter().enumerate() {
                let gt = r.to_core()?;
                for corner in &gt.rect.corners {
                    if !in_bounds(corner[0], corner[1], &image) {
                        return Err(FormatError::OutOfBounds {
                            what: format!("ground truth rect {i} of {label}"),
                        });
                    }
                }
                out.push(gt);
            }
            ground_truth.insert(label.clone(), out);
        }

        let planted = match &dto.planted_best {
            None => None,
            Some(p) => {
                let pose = p.grasp.to_core()?;
                let ScenePayload::Candidates(cands) = &payload else {
                    return Err(FormatError::PlantedWithoutCandidates);
                };
                verify_planted(&detections, cands, &p.label, &pose)?;
                Some((p.label.clone(), pose))
            }
        };

        Ok(Self {
            seed: dto.seed,
            image,
            detections,
            payload,
            ground_truth,
            planted,
        })
    }

    pub fn to_dto(&self) -> SceneDto {
        SceneDto {
            seed: self.seed,
            image: self.image,
            detections: self
                .detections
                .iter()
                .map(DetectionDto::from_core)
                .collect(),
            grasp_candidates: match &self.payload {
                ScenePayload::Candidates(c) => Some(c.iter().map(GraspDto::from_core).collect()),
                ScenePayload::Maps(_) => None,
            },
            grasp_maps: match &self.payload {
                ScenePayload::Maps(m) => Some(GraspMapsDto::from_core(m)),
                ScenePayload::Candidates(_) => None,
            },
            ground_truth: self
                .ground_truth
                .iter()
                .map(|(label, rects)| {
                    (
                        label.clone(),
                        rects.iter().map(GtRectDto::from_core).collect(),
                    )
                })
                .collect(),
            planted_best: self.planted.as_ref().map(|(label, pose)| PlantedDto {
                label: label.clone(),
                grasp: GraspDto::from_core(pose),
            }),
        }
    }
}

/// The planted answer must be the unique maximum-quality candidate whose
/// center lies inside a box of its label.
fn verify_planted(
    detections: &[DetectionBox],
    candidates: &[GraspPose],
    label: &str,
    expected: &GraspPose,
) -> Result<(), FormatError> {
    let boxes: Vec<&DetectionBox> = detections.iter().filter(|b| b.label == label).collect();
    if boxes.is_empty() {
        return Err(FormatError::PlantedMismatch);
    }
    let in_box: Vec<&GraspPose> = candidates
        .iter()
        .filter(|c| {
            boxes
                .iter()
                .any(|b| graspfusion_core::dgbcm::point_in_box(c.x, c.y, b))
        })
        .collect();
    let Some(best) = in_box.iter().min_by(|a, b| GraspPose::rank_cmp(a, b)) else {
        return Err(FormatError::PlantedMismatch);
    };
    let unique = in_box.iter().filter(|c| c.quality == best.quality).count() == 1;
    if !unique || **best != *expected {
        return Err(FormatError::PlantedMismatch);
    }
    Ok(())
}

pub fn check_version(version: u32) -> Result<(), FormatError> {
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    Ok(())
}

/// Pretty JSON with a trailing newline — the single serialization used for
/// every CLI output and generated file.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}
