//! Command-line interface.
//!
//! Every subcommand prints one JSON document on standard output. Exit
//! codes: 0 on success, 2 for domain errors (unknown label, no grasp in
//! box, file parse failures, bad flags) with a machine-readable
//! `{"error":{"kind","detail"}}` object, 1 for internal contract
//! violations.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use graspfusion_core::dgbcm::{dgbcm_select, index_detections, DgbcmError};
use graspfusion_core::frames::grasp_to_robot;
use graspfusion_core::grasp::GraspThresholds;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::eval::{evaluate_dataset, EvalError, EvalOptions};
use crate::formats::{
    check_version, to_json_string, CalibrationFile, DetectionsFile, FormatError, GraspDto,
    GraspsFile, Scene, FORMAT_VERSION,
};
use crate::gradsuite::run_gradient_suite;
use crate::scene::{gen_scenes_file, GenError, SceneSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Dgbcm(#[from] DgbcmError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid grasp pose: {0}")]
    Grasp(#[from] graspfusion_core::grasp::GraspError),
    #[error("invalid calibration: {0}")]
    Frame(#[from] graspfusion_core::frames::FrameError),
    #[error("gradient checks failed")]
    GradCheckFailed,
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "Io",
            CliError::Json { .. } => "ParseError",
            CliError::Format(FormatError::PlantedMismatch) => "InvalidScene",
            CliError::Format(_) => "SchemaError",
            CliError::Dgbcm(DgbcmError::LabelNotFound { .. }) => "LabelNotFound",
            CliError::Dgbcm(DgbcmError::NoGraspInBox { .. }) => "NoGraspInBox",
            CliError::Dgbcm(DgbcmError::MalformedBox { .. }) => "SchemaError",
            CliError::Gen(_) => "GenError",
            CliError::Eval(_) => "EvalError",
            CliError::Grasp(_) => "SchemaError",
            CliError::Frame(_) => "InvalidCalibration",
            CliError::GradCheckFailed => "GradCheckFailed",
            CliError::Internal(_) => "Internal",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "graspfusion",
    version,
    about = "Detection-grasp fusion: gradient checks, grasp selection by detection box, scene evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every kernel/module gradient check; exit 0 iff all pass.
    Gradcheck {
        /// Seeds per operation.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Select the best grasp whose center lies in a box of the target label.
    Match {
        /// Detections JSON file.
        #[arg(long)]
        detections: PathBuf,
        /// Grasp candidates JSON file.
        #[arg(long)]
        grasps: PathBuf,
        /// Category label to grasp.
        #[arg(long)]
        target: String,
    },
    /// Evaluate scenes: Acc over top predictions vs. ground truth.
    Eval {
        /// Scenes JSON file.
        #[arg(long)]
        scenes: PathBuf,
        /// IoU threshold (strictly greater passes).
        #[arg(long, default_value_t = GraspThresholds::DEFAULT_IOU)]
        iou: f64,
        /// Angle gate in degrees (equality passes).
        #[arg(long = "angle-deg", default_value_t = GraspThresholds::DEFAULT_ANGLE_DEG)]
        angle_deg: f64,
        /// Rectangle height / jaw width ratio.
        #[arg(long = "height-ratio", default_value_t = GraspThresholds::DEFAULT_HEIGHT_RATIO)]
        height_ratio: f64,
        /// Worker threads (default: rayon's choice). Output is identical
        /// for any value.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Generate deterministic synthetic scenes.
    GenScenes {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: u64,
        /// Output file for the scenes JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
        /// Categories per scene (drawn from a fixed pool).
        #[arg(long, default_value_t = 3)]
        labels: usize,
        #[arg(long = "boxes-per-label", default_value_t = 2)]
        boxes_per_label: usize,
        #[arg(long, default_value_t = 8)]
        candidates: usize,
        /// Keep every candidate inside the target's boxes.
        #[arg(long = "all-in-target", default_value_t = false)]
        all_in_target: bool,
        /// Plant non-matching ground truth in the last N scenes.
        #[arg(long, default_value_t = 0)]
        incorrect: u64,
    },
    /// Transform grasps from pixel space into the robot frame.
    Transform {
        /// Calibration JSON file (intrinsics + hand-eye matrix).
        #[arg(long)]
        calib: PathBuf,
        /// Grasps JSON file.
        #[arg(long)]
        grasp: PathBuf,
        /// Depth at the grasp centers, meters.
        #[arg(long)]
        depth: f64,
    },
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_to_string(path)?).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Serialize)]
struct MatchResultDto {
    format_version: u32,
    target: String,
    selected: GraspDto,
    matched_box: crate::formats::DetectionDto,
    candidates_considered: usize,
    discarded: usize,
    instance_best: Vec<Option<GraspDto>>,
}

#[derive(Debug, Serialize)]
struct RobotGraspDto {
    position: [f64; 3],
    yaw: f64,
    jaw_width: f64,
    quality: f64,
}

#[derive(Debug, Serialize)]
struct TransformOutput {
    format_version: u32,
    depth: f64,
    /// Jaw widths convert through fx at the center depth; anisotropic
    /// intrinsics are approximated.
    width_conversion: &'static str,
    /// The planar angle composes with the hand-eye z-yaw only (top-down
    /// camera assumption).
    yaw_composition: &'static str,
    robot_grasps: Vec<RobotGraspDto>,
}

#[derive(Debug, Serialize)]
struct GenScenesOutput {
    format_version: u32,
    out: String,
    scenes_written: u64,
    seed: u64,
}

fn run_command(command: Command) -> Result<String, CliError> {
    match command {
        Command::Gradcheck { seeds } => {
            let report = run_gradient_suite(seeds);
            let text = to_json_string(&report);
            if report.passed {
                Ok(text)
            } else {
                // the report itself still goes to stdout, wrapped below
                Err(CliError::GradCheckFailed)
            }
        }
        Command::Match {
            detections,
            grasps,
            target,
        } => {
            let det_file: DetectionsFile = parse_json(&detections)?;
            check_version(det_file.format_version)?;
            let grasp_file: GraspsFile = parse_json(&grasps)?;
            check_version(grasp_file.format_version)?;

            let boxes: Vec<_> = det_file.detections.iter().map(|d| d.to_core()).collect();
            let set = index_detections(&boxes)?;
            let candidates = grasp_file
                .grasps
                .iter()
                .map(|g| g.to_core())
                .collect::<Result<Vec<_>, _>>()?;
            let result = dgbcm_select(&set, &candidates, &target)?;
            Ok(to_json_string(&MatchResultDto {
                format_version: FORMAT_VERSION,
                target,
                selected: GraspDto::from_core(&result.selected),
                matched_box: crate::formats::DetectionDto::from_core(&result.matched_box),
                candidates_considered: result.candidates_considered,
                discarded: result.discarded,
                instance_best: result
                    .instance_best
                    .iter()
                    .map(|o| o.as_ref().map(GraspDto::from_core))
                    .collect(),
            }))
        }
        Command::Eval {
            scenes,
            iou,
            angle_deg,
            height_ratio,
            threads,
        } => {
            let file: crate::formats::ScenesFile = parse_json(&scenes)?;
            check_version(file.format_version)?;
            let scenes = file
                .scenes
                .iter()
                .map(Scene::from_dto)
                .collect::<Result<Vec<_>, _>>()?;
            let opts = EvalOptions {
                thresholds: GraspThresholds::with_angle_degrees(iou, angle_deg, height_ratio),
            };
            let report = match threads {
                None => evaluate_dataset(&scenes, &opts)?,
                Some(n) => {
                    let pool = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build()
                        .map_err(|e| CliError::Internal(e.to_string()))?;
                    pool.install(|| evaluate_dataset(&scenes, &opts))?
                }
            };
            Ok(to_json_string(&report))
        }
        Command::GenScenes {
            seed,
            count,
            out,
            width,
            height,
            labels,
            boxes_per_label,
            candidates,
            all_in_target,
            incorrect,
        } => {
            let spec = SceneSpec {
                width,
                height,
                n_labels: labels,
                boxes_per_label,
                n_candidates: candidates,
                all_candidates_in_target: all_in_target,
                plant_correct_gt: true,
                height_ratio: GraspThresholds::DEFAULT_HEIGHT_RATIO,
            };
            let file = gen_scenes_file(seed, count, &spec, incorrect)?;
            std::fs::write(&out, to_json_string(&file)).map_err(|source| CliError::Io {
                path: out.clone(),
                source,
            })?;
            Ok(to_json_string(&GenScenesOutput {
                format_version: FORMAT_VERSION,
                out: out.display().to_string(),
                scenes_written: count,
                seed,
            }))
        }
        Command::Transform {
            calib,
            grasp,
            depth,
        } => {
            let calib_file: CalibrationFile = parse_json(&calib)?;
            let (cam, pose) = calib_file.to_core()?;
            let grasp_file: GraspsFile = parse_json(&grasp)?;
            check_version(grasp_file.format_version)?;
            let mut robot_grasps = Vec::with_capacity(grasp_file.grasps.len());
            for g in &grasp_file.grasps {
                let out = grasp_to_robot(&g.to_core()?, depth, &cam, &pose)?;
                robot_grasps.push(RobotGraspDto {
                    position: out.position,
                    yaw: out.yaw,
                    jaw_width: out.jaw_width,
                    quality: out.quality,
                });
            }
            Ok(to_json_string(&TransformOutput {
                format_version: FORMAT_VERSION,
                depth,
                width_conversion: "fx",
                yaw_composition: "theta + hand-eye z-yaw (top-down camera)",
                robot_grasps,
            }))
        }
    }
}

/// Parse and run; returns the process exit code. All regular output goes
/// to `stdout`, clap usage errors to stderr.
pub fn cli_run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    2
                }
            };
        }
    };
    match run_command(cli.command) {
        Ok(text) => {
            let _ = stdout.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            let body = json!({
                "error": {
                    "kind": e.kind(),
                    "detail": e.to_string(),
                }
            });
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&body).unwrap());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String) {
        let mut out = Vec::new();
        let code = cli_run(
            std::iter::once("graspfusion").chain(args.iter().copied()),
            &mut out,
        );
        (code, String::from_utf8(out).unwrap())
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        let (code, _) = run(&["frobnicate"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out) = run(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("gradcheck"));
        assert!(out.contains("match"));
    }

    #[test]
    fn missing_file_reports_io_error() {
        let (code, out) = run(&[
            "match",
            "--detections",
            "/nonexistent/d.json",
            "--grasps",
            "/nonexistent/g.json",
            "--target",
            "cup",
        ]);
        assert_eq!(code, 2);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["error"]["kind"], "Io");
    }

    #[test]
    fn short_gradcheck_passes() {
        let (code, out) = run(&["gradcheck", "--seeds", "2"]);
        assert_eq!(code, 0, "{out}");
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["passed"], true);
    }
}
