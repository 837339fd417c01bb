//! Harness around `graspfusion-core`: JSON file formats, Cornell
//! annotation parsing, deterministic synthetic scenes, dataset
//! evaluation, the gradient-check suite, and the CLI.

pub mod cli;
pub mod cornell;
pub mod eval;
pub mod formats;
pub mod gradsuite;
pub mod params;
pub mod scene;

pub use eval::{evaluate_dataset, EvalOptions, EvalReport};
pub use formats::{Scene, ScenePayload, ScenesFile, FORMAT_VERSION};
pub use gradsuite::run_gradient_suite;
pub use scene::{gen_scenes_file, gen_synthetic_scene, SceneSpec};
