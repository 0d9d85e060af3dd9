//! Sequence ingestion and synthetic scene generation.
//!
//! A sequence directory holds `intrinsics.txt`, `labels.txt` and per-frame
//! pose / 16-bit depth / 16-bit segment files (see [`loader`]). The
//! [`synth`] generator renders analytic scenes into the same layout plus a
//! voxelized ground-truth volume, closing the loop for end-to-end tests.

mod loader;
mod synth;

pub use loader::{load_sequence, SequenceLoader};
pub use synth::{generate_synthetic, ObjectSpec, SceneSpec, ShapeSpec, SynthOutput, TrajectorySpec};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{GeometryError, Intrinsics, Pose};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("frame {frame}: missing {kind} file")]
    MissingFrameFile { frame: u32, kind: &'static str },
    #[error("frame {frame}: {reason}")]
    MalformedFrame { frame: u32, reason: String },
    #[error("unreadable intrinsics: {reason}")]
    BadIntrinsics { reason: String },
    #[error("bad label map: {0}")]
    BadLabels(#[from] crate::labels::LabelMapError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("image error on {path}: {reason}")]
    Image { path: String, reason: String },
    #[error("invalid scene spec: {field}: {reason}")]
    InvalidSpec { field: String, reason: String },
    #[error("no frames in sequence directory {dir}")]
    NoFrames { dir: String },
}

/// One posed RGB-D panoptic observation.
///
/// Depth is in meters with 0 marking invalid pixels; the segment image holds
/// per-pixel local segment ids (0 = unlabeled) whose classes come from
/// `segment_classes`.
#[derive(Debug, Clone)]
pub struct PanopticFrame {
    pub index: u32,
    pub depth: Vec<f32>,
    pub segment_image: Vec<u16>,
    pub segment_classes: BTreeMap<u16, u16>,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

impl PanopticFrame {
    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    pub fn pixel_count(&self) -> usize {
        (self.intrinsics.width * self.intrinsics.height) as usize
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.pixel_count();
        let fail = |reason: String| {
            Err(DatasetError::MalformedFrame { frame: self.index, reason })
        };
        if self.depth.len() != n {
            return fail(format!("depth has {} pixels, expected {n}", self.depth.len()));
        }
        if self.segment_image.len() != n {
            return fail(format!(
                "segment image has {} pixels, expected {n}",
                self.segment_image.len()
            ));
        }
        if self.depth.iter().any(|&d| d < 0.0 || !d.is_finite()) {
            return fail("negative or non-finite depth value".into());
        }
        self.pose.validate()?;
        self.intrinsics.validate()?;
        Ok(())
    }
}
