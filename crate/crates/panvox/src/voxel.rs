//! Sparse voxel-block storage of the panoptic reconstruction state.
//!
//! Voxels live in 8x8x8 blocks allocated on first write and keyed by block
//! coordinate, so memory tracks observed space. Each voxel carries a
//! truncated signed distance with its fusion weight, a per-class weight
//! histogram, and one instance id guarded by a confidence counter. The
//! global [`InstanceRegistry`] allocates instance ids and never reuses them.

use std::collections::HashMap;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::Vector3;
use thiserror::Error;

use crate::labels::LabelMap;

/// Voxels per block edge.
pub const BLOCK_SIZE: i32 = 8;
const BLOCK_VOLUME: usize = (BLOCK_SIZE * BLOCK_SIZE * BLOCK_SIZE) as usize;

/// Default fusion weight cap.
pub const DEFAULT_W_MAX: f32 = 128.0;

/// Integer voxel coordinate (world / voxel_size, floored).
pub type VoxelCoord = [i32; 3];

#[derive(Debug, Error, PartialEq)]
pub enum VoxelError {
    #[error("invalid voxel state: {reason}")]
    InvalidState { reason: String },
    #[error("class histogram has {got} slots, grid expects {expected}")]
    HistogramLength { expected: usize, got: usize },
    #[error("class {class_id} is a stuff class and cannot receive an instance")]
    StuffClassInstance { class_id: u16 },
    #[error("class {class_id} is not in the label map")]
    UnknownClass { class_id: u16 },
}

/// Per-voxel fused state.
///
/// `class_hist` has one slot per semantic class plus slot 0 ("unobserved")
/// and stores accumulated observation weights; the argmax is the fused
/// class. `instance_id` 0 means no instance; the counter reaches 0 before
/// a conflicting id may take over.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelState {
    pub tsdf: f32,
    pub weight: f32,
    pub class_hist: Box<[f32]>,
    pub instance_id: u32,
    pub instance_counter: f32,
}

impl VoxelState {
    pub fn empty(n_class_slots: usize) -> Self {
        Self {
            tsdf: 0.0,
            weight: 0.0,
            class_hist: vec![0.0; n_class_slots].into_boxed_slice(),
            instance_id: 0,
            instance_counter: 0.0,
        }
    }

    /// Argmax class of the histogram; ties break to the lower class index.
    pub fn dominant_class(&self) -> u16 {
        let mut best = 0usize;
        for (i, &w) in self.class_hist.iter().enumerate() {
            if w > self.class_hist[best] {
                best = i;
            }
        }
        best as u16
    }

    fn validate(&self, n_class_slots: usize, w_max: f32) -> Result<(), VoxelError> {
        let fail = |reason: String| Err(VoxelError::InvalidState { reason });
        if self.class_hist.len() != n_class_slots {
            return Err(VoxelError::HistogramLength {
                expected: n_class_slots,
                got: self.class_hist.len(),
            });
        }
        if !(-1.0..=1.0).contains(&self.tsdf) {
            return fail(format!("tsdf {} outside [-1, 1]", self.tsdf));
        }
        if !(0.0..=w_max).contains(&self.weight) {
            return fail(format!("weight {} outside [0, {w_max}]", self.weight));
        }
        if self.class_hist.iter().any(|&w| w < 0.0) {
            return fail("negative class histogram entry".into());
        }
        if self.instance_counter < 0.0 {
            return fail(format!("negative instance counter {}", self.instance_counter));
        }
        if self.instance_id == 0 && self.instance_counter != 0.0 {
            return fail("instance counter nonzero without an instance id".into());
        }
        Ok(())
    }
}

struct Block {
    states: Vec<VoxelState>,
    /// Last integration epoch that fused geometry into each voxel.
    geometry_stamps: Vec<u32>,
    /// Last integration epoch that fused a label into each voxel.
    label_stamps: Vec<u32>,
}

impl Block {
    fn new(n_class_slots: usize) -> Self {
        Self {
            states: vec![VoxelState::empty(n_class_slots); BLOCK_VOLUME],
            geometry_stamps: vec![0; BLOCK_VOLUME],
            label_stamps: vec![0; BLOCK_VOLUME],
        }
    }
}

fn block_of(coord: VoxelCoord) -> VoxelCoord {
    [
        coord[0].div_euclid(BLOCK_SIZE),
        coord[1].div_euclid(BLOCK_SIZE),
        coord[2].div_euclid(BLOCK_SIZE),
    ]
}

fn index_in_block(coord: VoxelCoord) -> usize {
    let x = coord[0].rem_euclid(BLOCK_SIZE);
    let y = coord[1].rem_euclid(BLOCK_SIZE);
    let z = coord[2].rem_euclid(BLOCK_SIZE);
    (x + BLOCK_SIZE * (y + BLOCK_SIZE * z)) as usize
}

/// Sparse voxel grid over 8^3 blocks.
pub struct VoxelBlockGrid {
    voxel_size: f64,
    truncation: f64,
    w_max: f32,
    n_classes: u16,
    blocks: HashMap<VoxelCoord, Block>,
    epoch: u32,
}

impl VoxelBlockGrid {
    /// `truncation` must be at least two voxels.
    pub fn new(voxel_size: f64, truncation: f64, w_max: f32, n_classes: u16) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        assert!(
            truncation >= 2.0 * voxel_size,
            "truncation {truncation} below 2 * voxel_size {voxel_size}"
        );
        assert!(w_max > 0.0);
        Self { voxel_size, truncation, w_max, n_classes, blocks: HashMap::new(), epoch: 0 }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn w_max(&self) -> f32 {
        self.w_max
    }

    pub fn n_classes(&self) -> u16 {
        self.n_classes
    }

    fn n_class_slots(&self) -> usize {
        self.n_classes as usize + 1
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Number of voxels that have received at least one observation.
    pub fn observed_voxel_count(&self) -> usize {
        self.blocks
            .values()
            .map(|b| b.states.iter().filter(|s| s.weight > 0.0).count())
            .sum()
    }

    pub fn world_to_voxel(&self, point: Vector3<f64>) -> VoxelCoord {
        [
            (point.x / self.voxel_size).floor() as i32,
            (point.y / self.voxel_size).floor() as i32,
            (point.z / self.voxel_size).floor() as i32,
        ]
    }

    pub fn voxel_center(&self, coord: VoxelCoord) -> Vector3<f64> {
        Vector3::new(
            (coord[0] as f64 + 0.5) * self.voxel_size,
            (coord[1] as f64 + 0.5) * self.voxel_size,
            (coord[2] as f64 + 0.5) * self.voxel_size,
        )
    }

    /// Read without allocating. `None` until the containing block exists;
    /// unwritten voxels inside an allocated block read as the default state.
    pub fn get_voxel(&self, coord: VoxelCoord) -> Option<&VoxelState> {
        self.blocks.get(&block_of(coord)).map(|b| &b.states[index_in_block(coord)])
    }

    /// Mutable access, allocating the containing block on demand.
    pub fn voxel_mut(&mut self, coord: VoxelCoord) -> &mut VoxelState {
        let slots = self.n_class_slots();
        let block = self.blocks.entry(block_of(coord)).or_insert_with(|| Block::new(slots));
        &mut block.states[index_in_block(coord)]
    }

    /// Starts a new integration pass; pass the returned epoch to
    /// [`Self::visit_voxel`] so per-voxel updates dedupe within the pass.
    pub fn begin_epoch(&mut self) -> u32 {
        self.epoch += 1;
        self.epoch
    }

    /// Mutable access plus the per-pass dedup slots, allocating on demand.
    /// Geometry and label claims are independent: a voxel whose geometry was
    /// already fused this pass can still take its label from a later sample
    /// that falls inside the label band.
    pub fn visit_voxel(&mut self, coord: VoxelCoord, epoch: u32) -> VoxelVisit<'_> {
        let slots = self.n_class_slots();
        let block = self.blocks.entry(block_of(coord)).or_insert_with(|| Block::new(slots));
        let idx = index_in_block(coord);
        VoxelVisit {
            state: &mut block.states[idx],
            geometry_stamp: &mut block.geometry_stamps[idx],
            label_stamp: &mut block.label_stamps[idx],
            epoch,
        }
    }

    /// Validating write; allocates the block on demand.
    pub fn write_voxel(&mut self, coord: VoxelCoord, state: VoxelState) -> Result<(), VoxelError> {
        state.validate(self.n_class_slots(), self.w_max)?;
        *self.voxel_mut(coord) = state;
        Ok(())
    }

    /// All observed voxels (weight > 0) in lexicographic coordinate order,
    /// with the fused class and instance. Stuff-class voxels report
    /// instance 0.
    pub fn extract_labeled_voxels(&self, labels: &LabelMap) -> Vec<LabeledVoxel> {
        let mut out = Vec::new();
        for (&block_coord, block) in &self.blocks {
            let base = [
                block_coord[0] * BLOCK_SIZE,
                block_coord[1] * BLOCK_SIZE,
                block_coord[2] * BLOCK_SIZE,
            ];
            for (idx, state) in block.states.iter().enumerate() {
                if state.weight <= 0.0 {
                    continue;
                }
                let i = idx as i32;
                let coord = [
                    base[0] + i % BLOCK_SIZE,
                    base[1] + (i / BLOCK_SIZE) % BLOCK_SIZE,
                    base[2] + i / (BLOCK_SIZE * BLOCK_SIZE),
                ];
                let class_id = state.dominant_class();
                let instance_id = if labels.is_thing(class_id) { state.instance_id } else { 0 };
                out.push(LabeledVoxel {
                    coord,
                    center: self.voxel_center(coord),
                    class_id,
                    instance_id,
                    tsdf: state.tsdf,
                    weight: state.weight,
                });
            }
        }
        out.sort_unstable_by_key(|v| v.coord);
        out
    }
}

/// One voxel's state during an integration pass; see
/// [`VoxelBlockGrid::visit_voxel`].
pub struct VoxelVisit<'a> {
    pub state: &'a mut VoxelState,
    geometry_stamp: &'a mut u32,
    label_stamp: &'a mut u32,
    epoch: u32,
}

impl VoxelVisit<'_> {
    /// Claims this pass's geometry update; false if already claimed.
    pub fn claim_geometry(&mut self) -> bool {
        if *self.geometry_stamp == self.epoch {
            return false;
        }
        *self.geometry_stamp = self.epoch;
        true
    }

    /// Claims this pass's label update; false if already claimed.
    pub fn claim_label(&mut self) -> bool {
        if *self.label_stamp == self.epoch {
            return false;
        }
        *self.label_stamp = self.epoch;
        true
    }

    pub fn fully_claimed(&self) -> bool {
        *self.geometry_stamp == self.epoch && *self.label_stamp == self.epoch
    }
}

/// One observed voxel as reported by [`VoxelBlockGrid::extract_labeled_voxels`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVoxel {
    pub coord: VoxelCoord,
    pub center: Vector3<f64>,
    pub class_id: u16,
    pub instance_id: u32,
    pub tsdf: f32,
    pub weight: f32,
}

/// Per-instance record kept by the registry.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEntry {
    pub class_id: u16,
    pub observations: u64,
    pub last_seen_frame: u32,
}

/// Global instance id allocator. Ids start at 1 and are never reused;
/// id 0 is reserved for "no instance".
pub struct InstanceRegistry {
    next_id: u32,
    thing_flags: Vec<bool>,
    entries: BTreeMap<u32, InstanceEntry>,
}

impl InstanceRegistry {
    pub fn new(labels: &LabelMap) -> Self {
        Self { next_id: 1, thing_flags: labels.thing_flags(), entries: BTreeMap::new() }
    }

    /// Births a fresh instance of a thing class.
    pub fn new_instance(&mut self, class_id: u16, frame: u32) -> Result<u32, VoxelError> {
        match self.thing_flags.get(class_id as usize) {
            Some(true) => {}
            Some(false) => return Err(VoxelError::StuffClassInstance { class_id }),
            None => return Err(VoxelError::UnknownClass { class_id }),
        }
        let id = self.next_id;
        self.next_id += 1;
        self.entries
            .insert(id, InstanceEntry { class_id, observations: 1, last_seen_frame: frame });
        Ok(id)
    }

    pub fn record_observation(&mut self, id: u32, frame: u32) {
        if let Some(entry) = self.entries.get_mut(&id) {
            entry.observations += 1;
            entry.last_seen_frame = frame;
        }
    }

    pub fn get(&self, id: u32) -> Option<&InstanceEntry> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn class_of(&self, id: u32) -> Option<u16> {
        self.entries.get(&id).map(|e| e.class_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Instances in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &InstanceEntry)> {
        self.entries.iter().map(|(&id, e)| (id, e))
    }

    /// One line per instance: `id class_id class_name observations`.
    pub fn summary_text(&self, labels: &LabelMap) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for (id, entry) in self.iter() {
            let name = labels.get(entry.class_id).map_or("?", |c| c.name.as_str());
            let _ = writeln!(out, "{id} {} {name} {}", entry.class_id, entry.observations);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Voxel dump format: "panvox v1 <voxel_size> <n_classes>" header, then one
// line per voxel "x y z tsdf weight class_id instance_id". UTF-8, LF.
// ---------------------------------------------------------------------------

pub const DUMP_MAGIC: &str = "panvox v1";

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("dump I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad dump header: {0:?}")]
    BadHeader(String),
    #[error("dump line {line}: {reason}")]
    BadLine { line: usize, reason: String },
}

/// Parsed contents of a voxel dump file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub voxel_size: f64,
    pub n_classes: u16,
    pub records: Vec<DumpRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpRecord {
    pub coord: VoxelCoord,
    pub tsdf: f32,
    pub weight: f32,
    pub class_id: u16,
    pub instance_id: u32,
}

pub fn write_dump<W: Write>(
    mut w: W,
    voxel_size: f64,
    n_classes: u16,
    records: &[DumpRecord],
) -> std::io::Result<()> {
    writeln!(w, "{DUMP_MAGIC} {voxel_size} {n_classes}")?;
    for r in records {
        writeln!(
            w,
            "{} {} {} {} {} {} {}",
            r.coord[0], r.coord[1], r.coord[2], r.tsdf, r.weight, r.class_id, r.instance_id
        )?;
    }
    Ok(())
}

pub fn read_dump<R: BufRead>(r: R) -> Result<Dump, DumpError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| DumpError::BadHeader("empty file".into()))??;
    let rest = header
        .strip_prefix(DUMP_MAGIC)
        .ok_or_else(|| DumpError::BadHeader(header.clone()))?;
    let mut parts = rest.split_whitespace();
    let (Some(vs), Some(nc), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(DumpError::BadHeader(header.clone()));
    };
    let voxel_size: f64 = vs.parse().map_err(|_| DumpError::BadHeader(header.clone()))?;
    let n_classes: u16 = nc.parse().map_err(|_| DumpError::BadHeader(header.clone()))?;

    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| DumpError::BadLine { line: i + 2, reason: reason.into() };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(bad(&format!("expected 7 fields, got {}", fields.len())));
        }
        records.push(DumpRecord {
            coord: [
                fields[0].parse().map_err(|_| bad("bad x"))?,
                fields[1].parse().map_err(|_| bad("bad y"))?,
                fields[2].parse().map_err(|_| bad("bad z"))?,
            ],
            tsdf: fields[3].parse().map_err(|_| bad("bad tsdf"))?,
            weight: fields[4].parse().map_err(|_| bad("bad weight"))?,
            class_id: fields[5].parse().map_err(|_| bad("bad class id"))?,
            instance_id: fields[6].parse().map_err(|_| bad("bad instance id"))?,
        });
    }
    Ok(Dump { voxel_size, n_classes, records })
}

impl VoxelBlockGrid {
    pub fn dump_records(&self, labels: &LabelMap) -> Vec<DumpRecord> {
        self.extract_labeled_voxels(labels)
            .into_iter()
            .map(|v| DumpRecord {
                coord: v.coord,
                tsdf: v.tsdf,
                weight: v.weight,
                class_id: v.class_id,
                instance_id: v.instance_id,
            })
            .collect()
    }
}
