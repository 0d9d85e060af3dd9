//! Online panoptic 3D reconstruction.
//!
//! Fuses posed depth frames and 2D panoptic segmentations into a sparse
//! TSDF voxel map that carries a semantic class and a persistent instance
//! identity per voxel. Per-frame instance association is solved exactly as
//! a rectangular linear assignment problem over projected-overlap
//! likelihoods. Ships a 3D Panoptic Quality evaluator and a synthetic
//! scene generator for closed-loop verification.

pub mod association;
pub mod dataset;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod labels;
pub mod lap;
pub mod pipeline;
pub mod projection;
pub mod voxel;
