//! Renders the map's instance and class identities into a frame's pixel
//! grid, one depth-guided voxel lookup per pixel.
//!
//! The incoming depth already localizes the surface, so instead of
//! raycasting the TSDF we unproject each valid-depth pixel, look up the
//! voxel containing the point and emit its stored instance id and dominant
//! class. Pixels with invalid depth (or landing in unobserved space) emit
//! 0/0.

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{Intrinsics, Pose};
use crate::voxel::{InstanceRegistry, VoxelBlockGrid};

/// Valid sensor depth window in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub min: f64,
    pub max: f64,
}

impl Default for DepthRange {
    fn default() -> Self {
        Self { min: 0.1, max: 8.0 }
    }
}

impl DepthRange {
    pub fn contains(&self, depth: f64) -> bool {
        depth > self.min && depth < self.max
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("depth image has {got} pixels, intrinsics say {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Per-pixel map identities rendered into a frame.
#[derive(Debug, Clone)]
pub struct RenderedIds {
    pub width: u32,
    pub height: u32,
    /// Global instance id per pixel, 0 = none.
    pub instance: Vec<u32>,
    /// Fused class id per pixel, 0 = unobserved.
    pub class: Vec<u16>,
    /// Whether the pixel's depth fell inside the valid range.
    pub valid: Vec<bool>,
}

impl RenderedIds {
    pub fn instance_at(&self, x: u32, y: u32) -> u32 {
        self.instance[(y * self.width + x) as usize]
    }

    pub fn class_at(&self, x: u32, y: u32) -> u16 {
        self.class[(y * self.width + x) as usize]
    }
}

/// Projects the map into the frame described by `pose` (world-from-camera),
/// `intr` and its `depth` image.
pub fn render_ids(
    grid: &VoxelBlockGrid,
    registry: &InstanceRegistry,
    pose: &Pose,
    intr: &Intrinsics,
    depth: &[f32],
    range: DepthRange,
) -> Result<RenderedIds, ProjectionError> {
    let (w, h) = (intr.width, intr.height);
    let n = (w * h) as usize;
    if depth.len() != n {
        return Err(ProjectionError::DimensionMismatch { expected: n, got: depth.len() });
    }

    let mut out = RenderedIds {
        width: w,
        height: h,
        instance: vec![0; n],
        class: vec![0; n],
        valid: vec![false; n],
    };

    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let d = depth[i] as f64;
            if !range.contains(d) {
                continue;
            }
            out.valid[i] = true;
            // Inline unproject: depth is validated positive by the range.
            let p_cam = Vector3::new(
                (x as f64 - intr.cx) / intr.fx * d,
                (y as f64 - intr.cy) / intr.fy * d,
                d,
            );
            let p_world = pose.transform(p_cam);
            let coord = grid.world_to_voxel(p_world);
            if let Some(state) = grid.get_voxel(coord) {
                if state.weight > 0.0 {
                    debug_assert!(
                        state.instance_id == 0 || registry.contains(state.instance_id),
                        "voxel holds instance {} unknown to the registry",
                        state.instance_id
                    );
                    out.instance[i] = state.instance_id;
                    out.class[i] = state.dominant_class();
                }
            }
        }
    }
    Ok(out)
}
