//! graspfusion-core — the compute layer of a detection–grasp fusion pipeline.
//!
//! Everything in this crate is a pure function of its inputs (double
//! precision throughout, deterministic, no IO), organized as:
//!
//! - [`tensor`] — a minimal dense C×H×W tensor with shape-checked kernels.
//! - [`ops`] — forward kernels (convolution, pooling, MLP, sigmoid, combine,
//!   bilinear upsampling) with hand-written vector–Jacobian products.
//! - [`attention`] — channel attention, spatial attention, and atrous
//!   spatial pyramid pooling built from those kernels.
//! - [`gradcheck`] — central finite-difference verification of every
//!   differentiable operation.
//! - [`loss`] — grid-cell/channel index mapping, Dice, Focal, mask and
//!   smooth-L1 losses.
//! - [`grasp`] — planar grasp poses, rotated-rectangle IoU, the
//!   IoU/angle correctness criterion, and quality-map decoding.
//! - [`frames`] — pixel → camera → robot coordinate transforms.
//! - [`dgbcm`] — box-coordinate matching: select the best grasp whose
//!   center falls inside a detection box of the requested category.
//!
//! The crate is `no_std` (with `alloc`); file formats, the CLI, and the
//! evaluation harness live in the companion `graspfusion` crate.

#![no_std]
// kernels are written as explicit index loops over C/H/W
#![allow(clippy::needless_range_loop)]
// validation guards use !(x > 0.0) so NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod attention;
pub mod dgbcm;
pub mod frames;
pub mod gradcheck;
pub mod grasp;
pub mod loss;
pub mod ops;
pub mod tensor;

pub use attention::{AsppConfig, CamParams, SamParams};
pub use dgbcm::{DetectionBox, DetectionSet, DgbcmError, MatchResult};
pub use frames::{CameraIntrinsics, FrameError, HandEyePose, RobotGrasp};
pub use gradcheck::{GradCheckReport, GradCheckSettings};
pub use grasp::{GraspMaps, GraspPose, GraspThresholds, GroundTruthRect, RotatedRect};
pub use loss::{GridSpec, LossWeights, MaskBatch};
pub use ops::{CombineMode, ConvSpec, Mlp2Params, PoolMode};
pub use tensor::{Tensor, TensorError};
