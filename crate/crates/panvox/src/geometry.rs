//! Pinhole camera model and rigid-body transforms.
//!
//! Poses are stored world-from-camera. All functions here are pure; no
//! distortion model (inputs are assumed pre-undistorted).

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub const ORTHONORMALITY_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("depth must be positive, got {depth}")]
    InvalidDepth { depth: f64 },
    #[error("rotation is not orthonormal with det +1 (residual {residual:.3e})")]
    NotARotation { residual: f64 },
    #[error("invalid intrinsics: {reason}")]
    InvalidIntrinsics { reason: String },
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |reason: String| Err(GeometryError::InvalidIntrinsics { reason });
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }
}

/// Where a camera-frame point lands on the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Continuous pixel coordinates inside [0,width) x [0,height).
    InView { u: f64, v: f64 },
    /// Projects in front of the camera but outside the image bounds.
    OutOfView { u: f64, v: f64 },
}

impl Projection {
    pub fn in_view(self) -> Option<(f64, f64)> {
        match self {
            Projection::InView { u, v } => Some((u, v)),
            Projection::OutOfView { .. } => None,
        }
    }
}

/// u = fx*x/z + cx, v = fy*y/z + cy. Points with z <= 0 are rejected.
pub fn project(point_camera: Vector3<f64>, intr: &Intrinsics) -> Result<Projection, GeometryError> {
    let z = point_camera.z;
    if z <= 0.0 {
        return Err(GeometryError::BehindCamera { z });
    }
    let u = intr.fx * point_camera.x / z + intr.cx;
    let v = intr.fy * point_camera.y / z + intr.cy;
    if u >= 0.0 && u < intr.width as f64 && v >= 0.0 && v < intr.height as f64 {
        Ok(Projection::InView { u, v })
    } else {
        Ok(Projection::OutOfView { u, v })
    }
}

/// Inverse of [`project`] at a given depth (camera-frame z).
pub fn unproject(u: f64, v: f64, depth: f64, intr: &Intrinsics) -> Result<Vector3<f64>, GeometryError> {
    if depth <= 0.0 {
        return Err(GeometryError::InvalidDepth { depth });
    }
    Ok(Vector3::new(
        (u - intr.cx) / intr.fx * depth,
        (v - intr.cy) / intr.fy * depth,
        depth,
    ))
}

/// Rigid world-from-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Checks R^T R = I and det R = +1 to [`ORTHONORMALITY_TOL`].
    pub fn validate(&self) -> Result<(), GeometryError> {
        let gram = self.rotation.transpose() * self.rotation;
        let mut residual = (gram - Matrix3::identity()).abs().max();
        residual = residual.max((self.rotation.determinant() - 1.0).abs());
        if residual > ORTHONORMALITY_TOL {
            return Err(GeometryError::NotARotation { residual });
        }
        Ok(())
    }

    pub fn transform(&self, point: Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rot_t = self.rotation.transpose();
        Pose { rotation: rot_t, translation: -(rot_t * self.translation) }
    }

    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        self.translation
    }
}
