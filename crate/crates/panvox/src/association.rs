//! Frame-to-map instance association.
//!
//! Each frame's segments are matched against the instances already in the
//! map: the map is rendered into the frame ([`crate::projection`]), pixel
//! overlaps become class-gated IoU likelihoods, likelihoods become -log
//! costs with per-segment new-instance dummy columns, and the LAP solver
//! picks the jointly most likely assignment. Segments landing on a dummy
//! column birth fresh registry instances; stuff segments bypass the whole
//! step and map to instance 0.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::dataset::{DatasetError, PanopticFrame};
use crate::labels::LabelMap;
use crate::lap::{self, CostMatrix, LapError};
use crate::projection::{render_ids, DepthRange, ProjectionError, RenderedIds};
use crate::voxel::{InstanceRegistry, VoxelBlockGrid, VoxelError};

/// Likelihood floor before the -log transform.
pub const LIKELIHOOD_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AssociationError {
    #[error("segment {segment_id} appears in the image but not in the class table")]
    MissingSegmentClass { segment_id: u16 },
    #[error("segment {segment_id} has class {class_id} which is not in the label map")]
    UnknownClass { segment_id: u16, class_id: u16 },
    #[error("segment image has {got} pixels, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Lap(#[from] LapError),
    #[error(transparent)]
    Registry(#[from] VoxelError),
    #[error(transparent)]
    Frame(#[from] DatasetError),
}

/// Tunables for one association step.
#[derive(Debug, Clone, Copy)]
pub struct AssociationConfig {
    /// Likelihood assigned to "this segment starts a new instance"; a match
    /// must beat it (IoU above this value) to win.
    pub new_instance_likelihood: f64,
    /// Segments smaller than this many pixels are dropped as speckle.
    pub min_segment_pixels: usize,
    pub depth_range: DepthRange,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            new_instance_likelihood: 0.25,
            min_segment_pixels: 50,
            depth_range: DepthRange::default(),
        }
    }
}

/// One frame segment: local id, semantic class and raw pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentEntry {
    pub id: u16,
    pub class_id: u16,
    pub pixel_count: usize,
}

/// Segments of a frame, ascending by local id.
#[derive(Debug, Clone, Default)]
pub struct SegmentTable {
    pub entries: Vec<SegmentEntry>,
}

impl SegmentTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Tabulates distinct nonzero segment ids with class and pixel count.
pub fn extract_segments(frame: &PanopticFrame) -> Result<SegmentTable, AssociationError> {
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for &seg in &frame.segment_image {
        if seg != 0 {
            *counts.entry(seg).or_insert(0) += 1;
        }
    }
    let mut entries = Vec::with_capacity(counts.len());
    for (id, pixel_count) in counts {
        let class_id = *frame
            .segment_classes
            .get(&id)
            .ok_or(AssociationError::MissingSegmentClass { segment_id: id })?;
        entries.push(SegmentEntry { id, class_id, pixel_count });
    }
    Ok(SegmentTable { entries })
}

/// Pixelwise contingency counts between frame segments and rendered map
/// instances, over valid-depth pixels only.
#[derive(Debug, Clone)]
pub struct OverlapCounts {
    /// Segment ids, ascending (row order).
    pub seg_ids: Vec<u16>,
    /// Candidate instance ids, ascending (column order).
    pub inst_ids: Vec<u32>,
    /// Row-major counts: pixels where segment row coincides with instance col.
    pub counts: Vec<u64>,
    /// Valid-depth pixels per segment.
    pub seg_totals: Vec<u64>,
    /// Valid-depth rendered pixels per instance.
    pub inst_totals: Vec<u64>,
}

impl OverlapCounts {
    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.inst_ids.len() + col]
    }
}

pub fn overlap_counts(
    segments: &SegmentTable,
    frame: &PanopticFrame,
    rendered: &RenderedIds,
) -> Result<OverlapCounts, AssociationError> {
    let n = frame.pixel_count();
    if frame.segment_image.len() != n {
        return Err(AssociationError::DimensionMismatch {
            expected: n,
            got: frame.segment_image.len(),
        });
    }
    if rendered.instance.len() != n {
        return Err(AssociationError::DimensionMismatch { expected: n, got: rendered.instance.len() });
    }

    let seg_ids: Vec<u16> = segments.entries.iter().map(|e| e.id).collect();
    let seg_row: HashMap<u16, usize> =
        seg_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    // First pass: which instances are visible at all.
    let mut inst_ids: Vec<u32> = rendered
        .instance
        .iter()
        .zip(&rendered.valid)
        .filter(|&(&inst, &valid)| valid && inst != 0)
        .map(|(&inst, _)| inst)
        .collect::<BTreeSet<u32>>()
        .into_iter()
        .collect();
    inst_ids.sort_unstable();
    let inst_col: HashMap<u32, usize> =
        inst_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let mut out = OverlapCounts {
        counts: vec![0; seg_ids.len() * inst_ids.len()],
        seg_totals: vec![0; seg_ids.len()],
        inst_totals: vec![0; inst_ids.len()],
        seg_ids,
        inst_ids,
    };

    for i in 0..n {
        if !rendered.valid[i] {
            continue;
        }
        let seg = frame.segment_image[i];
        let inst = rendered.instance[i];
        let row = if seg != 0 { seg_row.get(&seg).copied() } else { None };
        let col = if inst != 0 { inst_col.get(&inst).copied() } else { None };
        if let Some(r) = row {
            out.seg_totals[r] += 1;
        }
        if let Some(c) = col {
            out.inst_totals[c] += 1;
        }
        if let (Some(r), Some(c)) = (row, col) {
            out.counts[r * out.inst_ids.len() + c] += 1;
        }
    }
    Ok(out)
}

/// Association likelihoods for thing-class segments: class-gated IoU of the
/// frame segment against the rendered map instance.
#[derive(Debug, Clone)]
pub struct LikelihoodMatrix {
    /// Thing-class segment ids (row order).
    pub seg_ids: Vec<u16>,
    /// Segment classes aligned with `seg_ids`.
    pub seg_classes: Vec<u16>,
    /// Candidate instance ids (column order).
    pub inst_ids: Vec<u32>,
    /// Row-major likelihoods in [0, 1].
    pub values: Vec<f64>,
}

impl LikelihoodMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.inst_ids.len() + col]
    }
}

pub fn likelihood_matrix(
    counts: &OverlapCounts,
    segments: &SegmentTable,
    registry: &InstanceRegistry,
    labels: &LabelMap,
) -> LikelihoodMatrix {
    let class_by_seg: HashMap<u16, u16> =
        segments.entries.iter().map(|e| (e.id, e.class_id)).collect();

    let mut seg_ids = Vec::new();
    let mut seg_classes = Vec::new();
    let mut rows = Vec::new();
    for (row, &seg) in counts.seg_ids.iter().enumerate() {
        let class = class_by_seg[&seg];
        if labels.is_thing(class) {
            seg_ids.push(seg);
            seg_classes.push(class);
            rows.push(row);
        }
    }

    let m = counts.inst_ids.len();
    let mut values = vec![0.0; seg_ids.len() * m];
    for (out_row, &row) in rows.iter().enumerate() {
        for col in 0..m {
            let inst_class = registry.class_of(counts.inst_ids[col]);
            if inst_class != Some(seg_classes[out_row]) {
                continue;
            }
            let inter = counts.count(row, col);
            if inter == 0 {
                continue;
            }
            let union = counts.seg_totals[row] + counts.inst_totals[col] - inter;
            values[out_row * m + col] = inter as f64 / union as f64;
        }
    }
    LikelihoodMatrix { seg_ids, seg_classes, inst_ids: counts.inst_ids.clone(), values }
}

/// -log transform plus per-row dummy columns: a match must be more likely
/// than `new_instance_likelihood` to beat starting a new instance.
pub fn cost_matrix(likelihoods: &LikelihoodMatrix, new_instance_likelihood: f64) -> CostMatrix {
    assert!(
        new_instance_likelihood > 0.0 && new_instance_likelihood < 1.0,
        "new-instance likelihood must be in (0, 1)"
    );
    let n = likelihoods.seg_ids.len();
    let m = likelihoods.inst_ids.len();
    let mut data = Vec::with_capacity(n * m);
    for &l in &likelihoods.values {
        data.push(-(l.max(LIKELIHOOD_EPS).ln()));
    }
    CostMatrix::new(n, m, data).augment(-new_instance_likelihood.ln())
}

/// Outcome of associating one frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssociationResult {
    /// Local segment id -> global instance id (0 for stuff).
    pub mapping: BTreeMap<u16, u32>,
    /// Segments that created new instances this frame.
    pub births: BTreeSet<u16>,
}

/// Full association step: render, tabulate, match, birth.
///
/// Thing segments get a global instance id (matched or freshly birthed);
/// stuff segments map to 0; segments below `min_segment_pixels` are dropped
/// and absent from the mapping.
pub fn associate(
    frame: &PanopticFrame,
    grid: &VoxelBlockGrid,
    registry: &mut InstanceRegistry,
    labels: &LabelMap,
    config: &AssociationConfig,
) -> Result<AssociationResult, AssociationError> {
    frame.validate()?;
    let rendered = render_ids(
        grid,
        registry,
        &frame.pose,
        &frame.intrinsics,
        &frame.depth,
        config.depth_range,
    )?;

    let all_segments = extract_segments(frame)?;
    let mut retained = SegmentTable::default();
    for &entry in &all_segments.entries {
        if !labels.is_valid_class(entry.class_id) {
            return Err(AssociationError::UnknownClass {
                segment_id: entry.id,
                class_id: entry.class_id,
            });
        }
        if entry.pixel_count >= config.min_segment_pixels {
            retained.entries.push(entry);
        }
    }

    let mut result = AssociationResult::default();
    let mut things = SegmentTable::default();
    for &entry in &retained.entries {
        if labels.is_thing(entry.class_id) {
            things.entries.push(entry);
        } else {
            result.mapping.insert(entry.id, 0);
        }
    }
    if things.is_empty() {
        return Ok(result);
    }

    let counts = overlap_counts(&things, frame, &rendered)?;
    let likelihoods = likelihood_matrix(&counts, &things, registry, labels);
    let costs = cost_matrix(&likelihoods, config.new_instance_likelihood);
    let assignment = lap::solve(&costs)?;

    let k = costs.original_cols().expect("cost matrix is augmented");
    for &(row, col) in &assignment.pairs {
        let seg = likelihoods.seg_ids[row];
        if col < k {
            let inst = likelihoods.inst_ids[col];
            registry.record_observation(inst, frame.index);
            result.mapping.insert(seg, inst);
        } else {
            let class = likelihoods.seg_classes[row];
            let inst = registry.new_instance(class, frame.index)?;
            result.mapping.insert(seg, inst);
            result.births.insert(seg);
        }
    }
    Ok(result)
}
