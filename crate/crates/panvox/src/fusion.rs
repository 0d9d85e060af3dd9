//! Volumetric integration of an associated frame.
//!
//! For every valid-depth pixel the voxels along the back-projected ray are
//! visited inside the truncation band around the observed surface. Each
//! voxel fuses a clamped, normalized projective signed distance by running
//! weighted mean; voxels in the near-surface half of the band additionally
//! fuse the pixel's class and mapped instance id. A per-grid epoch stamp
//! guarantees each voxel is updated at most once per frame.

use nalgebra::Vector3;
use thiserror::Error;

use crate::association::AssociationResult;
use crate::dataset::{DatasetError, PanopticFrame};
use crate::projection::DepthRange;
use crate::voxel::{VoxelBlockGrid, VoxelState};

/// Fraction of the truncation band that receives label updates; labels
/// belong to surfaces, not free space.
pub const LABEL_BAND_FRACTION: f64 = 0.5;

/// Ray sampling step as a fraction of the voxel size.
const MARCH_STEP_FRACTION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Frame(#[from] DatasetError),
}

/// Per-frame integration tunables. Truncation and the weight cap live on
/// the grid itself.
#[derive(Debug, Clone, Copy)]
pub struct FusionConfig {
    /// Weight of one observation.
    pub w_frame: f32,
    pub depth_range: DepthRange,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { w_frame: 1.0, depth_range: DepthRange::default() }
    }
}

/// Running weighted mean of the normalized signed distance, weight capped.
pub fn update_voxel_tsdf(v: &mut VoxelState, d_norm: f32, w_frame: f32, w_max: f32) {
    debug_assert!((-1.0..=1.0).contains(&d_norm));
    v.tsdf = (v.weight * v.tsdf + w_frame * d_norm) / (v.weight + w_frame);
    v.weight = (v.weight + w_frame).min(w_max);
}

/// Accumulates class evidence and maintains the instance counter: adopt
/// when empty or exhausted, reinforce on agreement, decay on conflict. The
/// held id survives until a later conflicting observation finds the counter
/// at zero.
pub fn update_voxel_label(
    v: &mut VoxelState,
    class_id: u16,
    instance_id: u32,
    w_frame: f32,
    w_max: f32,
) {
    v.class_hist[class_id as usize] += w_frame;
    if v.instance_id == 0 || v.instance_counter == 0.0 {
        if instance_id != 0 {
            v.instance_id = instance_id;
            v.instance_counter = w_frame.min(w_max);
        }
    } else if instance_id == v.instance_id {
        v.instance_counter = (v.instance_counter + w_frame).min(w_max);
    } else {
        v.instance_counter = (v.instance_counter - w_frame).max(0.0);
    }
}

/// Integrates one frame into the grid using the segment-to-instance mapping
/// decided by association.
pub fn integrate_frame(
    grid: &mut VoxelBlockGrid,
    frame: &PanopticFrame,
    result: &AssociationResult,
    config: &FusionConfig,
) -> Result<(), FusionError> {
    frame.validate()?;
    let intr = &frame.intrinsics;
    let tau = grid.truncation();
    let w_max = grid.w_max();
    let label_band = tau * LABEL_BAND_FRACTION;
    let epoch = grid.begin_epoch();
    let cam_from_world = frame.pose.inverse();

    for y in 0..intr.height {
        for x in 0..intr.width {
            let i = (y * intr.width + x) as usize;
            let d = frame.depth[i] as f64;
            if !config.depth_range.contains(d) {
                continue;
            }

            let seg = frame.segment_image[i];
            let (class_id, instance_id) = match result.mapping.get(&seg) {
                Some(&inst) => (frame.segment_classes.get(&seg).copied().unwrap_or(0), inst),
                None => (0, 0), // unlabeled or dropped segment: geometry only
            };

            // Ray through the pixel; the parameter s is camera-frame z.
            let dir_cam = Vector3::new(
                (x as f64 - intr.cx) / intr.fx,
                (y as f64 - intr.cy) / intr.fy,
                1.0,
            );
            let step = MARCH_STEP_FRACTION * grid.voxel_size() / dir_cam.norm();
            let s_lo = (d - tau).max(1e-3);
            let s_hi = d + tau;

            let mut prev_coord = [i32::MIN; 3];
            let mut s = s_lo;
            while s <= s_hi {
                let p_world = frame.pose.transform(dir_cam * s);
                let coord = grid.world_to_voxel(p_world);
                s += step;
                if coord == prev_coord {
                    continue;
                }
                prev_coord = coord;
                let center = grid.voxel_center(coord);
                let mut visit = grid.visit_voxel(coord, epoch);
                if visit.fully_claimed() {
                    continue;
                }
                let z_center = cam_from_world.transform(center).z;
                let sdf = d - z_center;
                if visit.claim_geometry() {
                    let d_norm = (sdf / tau).clamp(-1.0, 1.0) as f32;
                    update_voxel_tsdf(visit.state, d_norm, config.w_frame, w_max);
                }
                if class_id != 0 && sdf.abs() <= label_band && visit.claim_label() {
                    update_voxel_label(visit.state, class_id, instance_id, config.w_frame, w_max);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Pose};
    use crate::voxel::DEFAULT_W_MAX;
    use std::collections::BTreeMap;

    fn state(n_slots: usize) -> VoxelState {
        VoxelState::empty(n_slots)
    }

    #[test]
    fn first_tsdf_observation() {
        let mut v = state(3);
        update_voxel_tsdf(&mut v, 0.5, 1.0, DEFAULT_W_MAX);
        assert_eq!(v.tsdf, 0.5);
        assert_eq!(v.weight, 1.0);
    }

    #[test]
    fn tsdf_weighted_mean() {
        let mut v = state(3);
        v.tsdf = 1.0;
        v.weight = 1.0;
        update_voxel_tsdf(&mut v, 0.0, 1.0, DEFAULT_W_MAX);
        assert_eq!(v.tsdf, 0.5);
        assert_eq!(v.weight, 2.0);
    }

    #[test]
    fn weight_caps_at_w_max() {
        let mut v = state(3);
        v.weight = DEFAULT_W_MAX;
        v.tsdf = 0.2;
        update_voxel_tsdf(&mut v, 0.2, 1.0, DEFAULT_W_MAX);
        assert_eq!(v.weight, DEFAULT_W_MAX);
        assert!((v.tsdf - 0.2).abs() < 1e-6);
    }

    #[test]
    fn tsdf_order_insensitive_for_equal_weights() {
        let mut a = state(3);
        update_voxel_tsdf(&mut a, 0.8, 1.0, DEFAULT_W_MAX);
        update_voxel_tsdf(&mut a, -0.4, 1.0, DEFAULT_W_MAX);
        let mut b = state(3);
        update_voxel_tsdf(&mut b, -0.4, 1.0, DEFAULT_W_MAX);
        update_voxel_tsdf(&mut b, 0.8, 1.0, DEFAULT_W_MAX);
        assert!((a.tsdf - b.tsdf).abs() < 1e-6);
        assert_eq!(a.weight, b.weight);
    }

    #[test]
    fn label_adoption() {
        let mut v = state(4);
        update_voxel_label(&mut v, 2, 7, 1.0, DEFAULT_W_MAX);
        assert_eq!(v.class_hist[2], 1.0);
        assert_eq!(v.instance_id, 7);
        assert_eq!(v.instance_counter, 1.0);
    }

    #[test]
    fn label_reinforcement() {
        let mut v = state(4);
        v.instance_id = 7;
        v.instance_counter = 2.0;
        update_voxel_label(&mut v, 2, 7, 1.0, DEFAULT_W_MAX);
        assert_eq!(v.instance_counter, 3.0);
    }

    #[test]
    fn label_conflict_decay_then_takeover() {
        let mut v = state(4);
        v.instance_id = 7;
        v.instance_counter = 1.0;
        update_voxel_label(&mut v, 2, 9, 1.0, DEFAULT_W_MAX);
        assert_eq!(v.instance_id, 7, "id retained while counter drains");
        assert_eq!(v.instance_counter, 0.0);
        update_voxel_label(&mut v, 2, 9, 1.0, DEFAULT_W_MAX);
        assert_eq!(v.instance_id, 9);
        assert_eq!(v.instance_counter, 1.0);
    }

    #[test]
    fn stuff_observation_never_adopts() {
        let mut v = state(4);
        update_voxel_label(&mut v, 1, 0, 1.0, DEFAULT_W_MAX);
        assert_eq!(v.instance_id, 0);
        assert_eq!(v.instance_counter, 0.0);
        assert_eq!(v.class_hist[1], 1.0);
    }

    #[test]
    fn histogram_conserves_total_weight() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v = state(5);
        let mut total = 0.0f32;
        for _ in 0..1000 {
            let class = rng.gen_range(1..5u16);
            let inst = rng.gen_range(0..4u32);
            let w = rng.gen_range(0.5..2.0f32);
            update_voxel_label(&mut v, class, inst, w, DEFAULT_W_MAX);
            total += w;
        }
        let sum: f32 = v.class_hist.iter().sum();
        assert!((sum - total).abs() / total < 1e-5);
    }

    #[test]
    fn label_convergence_after_enough_agreement() {
        // k consecutive observations of instance j with k > counter always
        // end holding j.
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let mut v = state(3);
            v.instance_id = 1;
            v.instance_counter = rng.gen_range(0..6) as f32;
            let k = v.instance_counter as usize + 1 + rng.gen_range(0..3);
            for _ in 0..k {
                update_voxel_label(&mut v, 1, 2, 1.0, DEFAULT_W_MAX);
            }
            assert_eq!(v.instance_id, 2, "counter was {}, k={k}", v.instance_counter);
        }
    }

    fn wall_frame(depth_m: f32) -> PanopticFrame {
        let intr = Intrinsics::new(60.0, 60.0, 20.0, 15.0, 40, 30).unwrap();
        let n = 1200;
        let mut segment_classes = BTreeMap::new();
        segment_classes.insert(1u16, 1u16);
        PanopticFrame {
            index: 0,
            depth: vec![depth_m; n],
            segment_image: vec![1; n],
            segment_classes,
            pose: Pose::identity(),
            intrinsics: intr,
        }
    }

    fn stuff_result() -> AssociationResult {
        let mut result = AssociationResult::default();
        result.mapping.insert(1, 0);
        result
    }

    #[test]
    fn flat_wall_tsdf_profile() {
        let mut grid = VoxelBlockGrid::new(0.05, 0.2, DEFAULT_W_MAX, 1);
        let frame = wall_frame(2.0);
        integrate_frame(&mut grid, &frame, &stuff_result(), &FusionConfig::default()).unwrap();

        // Along the optical axis: voxel centers at z = (k + 0.5) * 0.05.
        // sdf = 2.0 - z_center, tsdf = sdf / 0.2.
        let mut checked = 0;
        for k in 36..=43 {
            let coord = [0, 0, k];
            if let Some(v) = grid.get_voxel(coord) {
                if v.weight == 0.0 {
                    continue;
                }
                let z_center = (k as f64 + 0.5) * 0.05;
                let expected = ((2.0 - z_center) / 0.2).clamp(-1.0, 1.0) as f32;
                assert!(
                    (v.tsdf - expected).abs() < 1e-5,
                    "voxel z={z_center}: tsdf {} expected {expected}",
                    v.tsdf
                );
                assert_eq!(v.weight, 1.0, "every voxel fused exactly once");
                checked += 1;
            }
        }
        assert!(checked >= 6, "only {checked} voxels along the axis were observed");

        // Every observed voxel fused exactly once this frame.
        for v in grid.extract_labeled_voxels(&crate::labels::LabelMap::parse("1 wall stuff\n").unwrap())
        {
            assert_eq!(v.weight, 1.0);
        }
    }

    #[test]
    fn integrating_twice_doubles_weights_keeps_tsdf() {
        let mut grid = VoxelBlockGrid::new(0.05, 0.2, DEFAULT_W_MAX, 1);
        let frame = wall_frame(2.0);
        let cfg = FusionConfig::default();
        integrate_frame(&mut grid, &frame, &stuff_result(), &cfg).unwrap();
        let labels = crate::labels::LabelMap::parse("1 wall stuff\n").unwrap();
        let once = grid.extract_labeled_voxels(&labels);
        integrate_frame(&mut grid, &frame, &stuff_result(), &cfg).unwrap();
        let twice = grid.extract_labeled_voxels(&labels);
        assert_eq!(once.len(), twice.len());
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(a.coord, b.coord);
            assert!((a.tsdf - b.tsdf).abs() < 1e-6);
            assert_eq!(b.weight, 2.0 * a.weight);
        }
    }

    #[test]
    fn empty_depth_leaves_grid_unchanged() {
        let mut grid = VoxelBlockGrid::new(0.05, 0.2, DEFAULT_W_MAX, 1);
        let mut frame = wall_frame(2.0);
        frame.depth = vec![0.0; frame.pixel_count()];
        integrate_frame(&mut grid, &frame, &stuff_result(), &FusionConfig::default()).unwrap();
        assert_eq!(grid.block_count(), 0);
    }

    #[test]
    fn labels_only_near_surface() {
        let mut grid = VoxelBlockGrid::new(0.05, 0.2, DEFAULT_W_MAX, 1);
        let frame = wall_frame(2.0);
        integrate_frame(&mut grid, &frame, &stuff_result(), &FusionConfig::default()).unwrap();
        for k in 30..=45 {
            if let Some(v) = grid.get_voxel([0, 0, k]) {
                if v.weight == 0.0 {
                    continue;
                }
                let z_center = (k as f64 + 0.5) * 0.05;
                let sdf = 2.0 - z_center;
                let labeled = v.class_hist[1] > 0.0;
                assert_eq!(
                    labeled,
                    sdf.abs() <= 0.1 + 1e-9,
                    "voxel at z={z_center} sdf={sdf} labeled={labeled}"
                );
            }
        }
    }

    #[test]
    fn randomized_updates_respect_invariants() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w_max = 16.0;
        let mut v = state(4);
        for _ in 0..20_000 {
            if rng.gen_bool(0.5) {
                update_voxel_tsdf(&mut v, rng.gen_range(-1.0..=1.0), rng.gen_range(0.1..2.0), w_max);
            } else {
                update_voxel_label(
                    &mut v,
                    rng.gen_range(1..4),
                    rng.gen_range(0..3),
                    rng.gen_range(0.1..2.0),
                    w_max,
                );
            }
            assert!((-1.0..=1.0).contains(&v.tsdf));
            assert!(v.weight <= w_max);
            assert!(v.instance_counter >= 0.0);
            assert!(v.instance_counter <= w_max);
            assert!(!(v.instance_id == 0 && v.instance_counter != 0.0));
        }
    }
}
