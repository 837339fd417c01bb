//! The pixel → camera → robot transform chain for planar grasps.
//!
//! The yaw composition assumes a top-down camera: the optical axis is
//! parallel to the robot approach axis, so the planar grasp angle composes
//! only with the z-yaw of the hand-eye rotation. That assumption is the
//! validity condition of [`grasp_to_robot`]; anything else needs a full
//! 6-DOF treatment, which is out of scope here.

use core::f64::consts::PI;
use core::fmt;

use crate::grasp::GraspPose;

const HALF_PI: f64 = PI / 2.0;
const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum FrameError {
    /// Focal lengths must be positive and finite.
    BadIntrinsics { field: &'static str },
    /// Depth must be strictly positive.
    NonPositiveDepth,
    /// The rotation block is not orthonormal with determinant +1.
    NotARotation,
    /// The 4×4 matrix is not a rigid transform (bottom row must be 0 0 0 1).
    BadHomogeneousRow,
    /// A matrix entry is not finite.
    NonFinite,
    /// Projection of a point at or behind the camera plane.
    PointBehindCamera,
}

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameError::BadIntrinsics { field } => write!(f, "bad camera intrinsics: {field}"),
            FrameError::NonPositiveDepth => write!(f, "depth must be positive"),
            FrameError::NotARotation => {
                write!(f, "rotation block is not orthonormal with determinant +1")
            }
            FrameError::BadHomogeneousRow => {
                write!(f, "bottom row of the 4x4 matrix must be 0 0 0 1")
            }
            FrameError::NonFinite => write!(f, "non-finite matrix entry"),
            FrameError::PointBehindCamera => write!(f, "point at or behind the camera plane"),
        }
    }
}

impl core::error::Error for FrameError {}

/// Pinhole intrinsics: focal lengths and principal point, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, FrameError> {
        if !(fx > 0.0) || !fx.is_finite() {
            return Err(FrameError::BadIntrinsics { field: "fx" });
        }
        if !(fy > 0.0) || !fy.is_finite() {
            return Err(FrameError::BadIntrinsics { field: "fy" });
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(FrameError::BadIntrinsics {
                field: "principal point",
            });
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// Rigid hand-eye transform: camera frame → robot base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandEyePose {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl HandEyePose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
        }
    }

    /// Validate a rotation + translation pair: RᵀR = I and det R = +1,
    /// both to 1e−9.
    pub fn from_parts(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self, FrameError> {
        if rotation.iter().flatten().any(|v| !v.is_finite())
            || translation.iter().any(|v| !v.is_finite())
        {
            return Err(FrameError::NonFinite);
        }
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += rotation[k][i] * rotation[k][j];
                }
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > ORTHO_TOL {
                    return Err(FrameError::NotARotation);
                }
            }
        }
        let det = rotation[0][0]
            * (rotation[1][1] * rotation[2][2] - rotation[1][2] * rotation[2][1])
            - rotation[0][1] * (rotation[1][0] * rotation[2][2] - rotation[1][2] * rotation[2][0])
            + rotation[0][2] * (rotation[1][0] * rotation[2][1] - rotation[1][1] * rotation[2][0]);
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(FrameError::NotARotation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Build from a 16-element row-major 4×4 homogeneous matrix.
    pub fn from_matrix(m: &[f64; 16]) -> Result<Self, FrameError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(FrameError::NonFinite);
        }
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom[0].abs() > ORTHO_TOL
            || bottom[1].abs() > ORTHO_TOL
            || bottom[2].abs() > ORTHO_TOL
            || (bottom[3] - 1.0).abs() > ORTHO_TOL
        {
            return Err(FrameError::BadHomogeneousRow);
        }
        let rotation = [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]];
        Self::from_parts(rotation, [m[3], m[7], m[11]])
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> &[f64; 3] {
        &self.translation
    }

    /// Row-major 16-element homogeneous matrix.
    pub fn to_matrix(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], //
            r[1][0], r[1][1], r[1][2], t[1], //
            r[2][0], r[2][1], r[2][2], t[2], //
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    /// The inverse rigid transform (Rᵀ, −Rᵀt).
    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let t = &self.translation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let neg = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        Self {
            rotation: rt,
            translation: neg,
        }
    }

    /// Yaw of the rotation about the robot z-axis: atan2(R₂₁, R₁₁).
    pub fn yaw(&self) -> f64 {
        libm::atan2(self.rotation[1][0], self.rotation[0][0])
    }
}

/// A grasp expressed in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotGrasp {
    /// Position in meters.
    pub position: [f64; 3],
    /// Jaw rotation about the approach axis, in [−π/2, π/2).
    pub yaw: f64,
    /// Jaw opening in meters.
    pub jaw_width: f64,
    /// Quality score carried through from the image-plane pose.
    pub quality: f64,
}

/// Pinhole back-projection of pixel (u, v) at depth z (meters):
/// X = (u − cx)·z / fx, Y = (v − cy)·z / fy, Z = z.
pub fn pixel_to_camera(
    u: f64,
    v: f64,
    z: f64,
    cam: &CameraIntrinsics,
) -> Result<[f64; 3], FrameError> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(FrameError::NonPositiveDepth);
    }
    Ok([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z])
}

/// Forward pinhole projection of a camera-frame point back to pixels.
pub fn camera_to_pixel(p: &[f64; 3], cam: &CameraIntrinsics) -> Result<(f64, f64), FrameError> {
    if !(p[2] > 0.0) {
        return Err(FrameError::PointBehindCamera);
    }
    Ok((cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy))
}

/// Apply the hand-eye transform: R·p + t.
pub fn camera_to_robot(p: &[f64; 3], pose: &HandEyePose) -> [f64; 3] {
    let r = pose.rotation();
    let t = pose.translation();
    [
        r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
        r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
        r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
    ]
}

/// Wrap an angle into [−π/2, π/2) modulo π. In-range angles are returned
/// unchanged, so the identity-calibration chain is bit-exact.
pub fn wrap_half_turn(angle: f64) -> f64 {
    if (-HALF_PI..HALF_PI).contains(&angle) {
        return angle;
    }
    let mut a = libm::fmod(angle + HALF_PI, PI);
    if a < 0.0 {
        a += PI;
    }
    a - HALF_PI
}

/// Full transform chain for one grasp: back-project the center at the
/// given depth, move it into the robot frame, compose the jaw angle with
/// the hand-eye yaw, and convert the pixel jaw width to meters by similar
/// triangles at the center depth (using fx; anisotropic intrinsics are an
/// accepted approximation, recorded by callers in output metadata).
pub fn grasp_to_robot(
    g: &GraspPose,
    depth_at_center: f64,
    cam: &CameraIntrinsics,
    pose: &HandEyePose,
) -> Result<RobotGrasp, FrameError> {
    let camera_point = pixel_to_camera(g.x, g.y, depth_at_center, cam)?;
    let position = camera_to_robot(&camera_point, pose);
    Ok(RobotGrasp {
        position,
        yaw: wrap_half_turn(g.theta + pose.yaw()),
        jaw_width: g.width * depth_at_center / cam.fx,
        quality: g.quality,
    })
}
