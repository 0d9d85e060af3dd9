//! 3D Panoptic Quality between two labeled voxel volumes.
//!
//! Segments are maximal voxel sets sharing (class, instance) for things and
//! class alone for stuff. A prediction matches a ground-truth segment iff
//! they share the class and their voxel IoU exceeds 0.5, which makes the
//! matching unique. PQ = summed TP IoU / (TP + FP/2 + FN/2), and factors
//! into segmentation quality (mean TP IoU) times recognition quality
//! (the F1-style detection ratio).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::labels::LabelMap;
use crate::voxel::{Dump, VoxelCoord};

pub const MATCH_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("volumes disagree: {reason}")]
    VolumeMismatch { reason: String },
}

/// Sparse labeled volume: voxel coordinate -> (class, instance).
#[derive(Debug, Clone, Default)]
pub struct LabeledVolume {
    pub voxel_size: f64,
    pub n_classes: u16,
    pub entries: HashMap<VoxelCoord, (u16, u32)>,
}

impl LabeledVolume {
    /// Builds from a parsed dump, keeping voxels with a semantic class
    /// (class 0 marks unobserved space and is never scored).
    pub fn from_dump(dump: &Dump) -> Self {
        let entries = dump
            .records
            .iter()
            .filter(|r| r.class_id != 0)
            .map(|r| (r.coord, (r.class_id, r.instance_id)))
            .collect();
        Self { voxel_size: dump.voxel_size, n_classes: dump.n_classes, entries }
    }

    pub fn insert(&mut self, coord: VoxelCoord, class_id: u16, instance_id: u32) {
        self.entries.insert(coord, (class_id, instance_id));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Segment key: stuff collapses to one segment per class.
fn segment_key(labels: &LabelMap, class_id: u16, instance_id: u32) -> (u16, u32) {
    if labels.is_thing(class_id) {
        (class_id, instance_id)
    } else {
        (class_id, 0)
    }
}

/// Per-class true/false positives/negatives and summed TP IoU.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassStats {
    pub tp: u32,
    pub fp: u32,
    pub fn_: u32,
    pub iou_sum: f64,
}

/// Panoptic matching counts keyed by class id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PqStats {
    pub per_class: BTreeMap<u16, ClassStats>,
}

/// Matches predicted against ground-truth segments voxelwise.
pub fn match_segments(
    pred: &LabeledVolume,
    gt: &LabeledVolume,
    labels: &LabelMap,
) -> Result<PqStats, EvaluationError> {
    if pred.voxel_size != gt.voxel_size {
        return Err(EvaluationError::VolumeMismatch {
            reason: format!("voxel sizes {} vs {}", pred.voxel_size, gt.voxel_size),
        });
    }
    if pred.n_classes != gt.n_classes || gt.n_classes != labels.n_classes() {
        return Err(EvaluationError::VolumeMismatch {
            reason: format!(
                "class counts pred={} gt={} labels={}",
                pred.n_classes,
                gt.n_classes,
                labels.n_classes()
            ),
        });
    }

    let mut pred_sizes: HashMap<(u16, u32), u64> = HashMap::new();
    for &(class, inst) in pred.entries.values() {
        *pred_sizes.entry(segment_key(labels, class, inst)).or_insert(0) += 1;
    }
    let mut gt_sizes: HashMap<(u16, u32), u64> = HashMap::new();
    for &(class, inst) in gt.entries.values() {
        *gt_sizes.entry(segment_key(labels, class, inst)).or_insert(0) += 1;
    }

    // Voxelwise intersections between same-class segment pairs.
    let mut intersections: HashMap<((u16, u32), (u16, u32)), u64> = HashMap::new();
    for (coord, &(p_class, p_inst)) in &pred.entries {
        if let Some(&(g_class, g_inst)) = gt.entries.get(coord) {
            if p_class == g_class {
                let key = (
                    segment_key(labels, p_class, p_inst),
                    segment_key(labels, g_class, g_inst),
                );
                *intersections.entry(key).or_insert(0) += 1;
            }
        }
    }

    let mut stats = PqStats::default();
    for class in labels.classes() {
        stats.per_class.insert(class.id, ClassStats::default());
    }

    let mut pred_matched: HashMap<(u16, u32), bool> =
        pred_sizes.keys().map(|&k| (k, false)).collect();
    let mut gt_matched: HashMap<(u16, u32), bool> = gt_sizes.keys().map(|&k| (k, false)).collect();

    for (&(p_key, g_key), &inter) in &intersections {
        let union = pred_sizes[&p_key] + gt_sizes[&g_key] - inter;
        let iou = inter as f64 / union as f64;
        if iou > MATCH_IOU_THRESHOLD {
            debug_assert!(!pred_matched[&p_key] && !gt_matched[&g_key], "IoU > 0.5 match not unique");
            pred_matched.insert(p_key, true);
            gt_matched.insert(g_key, true);
            let entry = stats.per_class.entry(p_key.0).or_default();
            entry.tp += 1;
            entry.iou_sum += iou;
        }
    }
    for (&(class, _), &matched) in &pred_matched {
        if !matched {
            stats.per_class.entry(class).or_default().fp += 1;
        }
    }
    for (&(class, _), &matched) in &gt_matched {
        if !matched {
            stats.per_class.entry(class).or_default().fn_ += 1;
        }
    }
    Ok(stats)
}

/// PQ/SQ/RQ for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub class_id: u16,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u32,
    pub fp: u32,
    pub fn_: u32,
}

/// Scores per class plus the mean over classes that appear at all.
#[derive(Debug, Clone, PartialEq)]
pub struct PqReport {
    pub per_class: Vec<ClassScore>,
    pub mean_pq: f64,
    pub mean_sq: f64,
    pub mean_rq: f64,
}

/// PQ = SQ * RQ with SQ = iou_sum / tp and RQ = tp / (tp + fp/2 + fn/2).
/// Classes with no segments on either side are excluded from the mean.
pub fn panoptic_quality(stats: &PqStats) -> PqReport {
    let mut per_class = Vec::new();
    let (mut sum_pq, mut sum_sq, mut sum_rq, mut scored) = (0.0, 0.0, 0.0, 0usize);
    for (&class_id, s) in &stats.per_class {
        if s.tp + s.fp + s.fn_ == 0 {
            continue;
        }
        let denom = s.tp as f64 + 0.5 * s.fp as f64 + 0.5 * s.fn_ as f64;
        let (pq, sq, rq) = if s.tp > 0 {
            let sq = s.iou_sum / s.tp as f64;
            let rq = s.tp as f64 / denom;
            (sq * rq, sq, rq)
        } else {
            (0.0, 0.0, 0.0)
        };
        per_class.push(ClassScore { class_id, pq, sq, rq, tp: s.tp, fp: s.fp, fn_: s.fn_ });
        sum_pq += pq;
        sum_sq += sq;
        sum_rq += rq;
        scored += 1;
    }
    let norm = if scored > 0 { scored as f64 } else { 1.0 };
    PqReport {
        per_class,
        mean_pq: sum_pq / norm,
        mean_sq: sum_sq / norm,
        mean_rq: sum_rq / norm,
    }
}

impl PqReport {
    /// Machine-readable lines: `class_id pq sq rq tp fp fn` + `mean pq sq rq`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.per_class {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
                s.class_id, s.pq, s.sq, s.rq, s.tp, s.fp, s.fn_
            );
        }
        let _ = writeln!(out, "mean\t{:.6}\t{:.6}\t{:.6}", self.mean_pq, self.mean_sq, self.mean_rq);
        out
    }

    pub fn to_table(&self, labels: &LabelMap) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:<12} {:>8} {:>8} {:>8} {:>5} {:>5} {:>5}",
            "class", "name", "pq", "sq", "rq", "tp", "fp", "fn");
        for s in &self.per_class {
            let name = labels.get(s.class_id).map_or("?", |c| c.name.as_str());
            let _ = writeln!(
                out,
                "{:<6} {:<12} {:>8.4} {:>8.4} {:>8.4} {:>5} {:>5} {:>5}",
                s.class_id, name, s.pq, s.sq, s.rq, s.tp, s.fp, s.fn_
            );
        }
        let _ = writeln!(
            out,
            "{:<6} {:<12} {:>8.4} {:>8.4} {:>8.4}",
            "mean", "", self.mean_pq, self.mean_sq, self.mean_rq
        );
        out
    }
}
