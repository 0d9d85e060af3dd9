//! End-to-end runs: online reconstruction, evaluation, synthesis.
//!
//! The reconstruction loop is strictly online: frames stream through a
//! capacity-2 prefetch queue and each one is associated and fused before
//! the next is consumed. Outputs (voxel dump, registry summary, per-frame
//! association and timing logs, config echo) are buffered and written only
//! on success, so failed runs leave no partial files.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::association::{associate, AssociationConfig, AssociationError};
use crate::dataset::{generate_synthetic, DatasetError, SceneSpec, SequenceLoader, SynthOutput};
use crate::evaluation::{match_segments, panoptic_quality, EvaluationError, LabeledVolume};
use crate::fusion::{integrate_frame, FusionConfig, FusionError};
use crate::labels::LabelMap;
use crate::projection::DepthRange;
use crate::voxel::{read_dump, write_dump, InstanceRegistry, VoxelBlockGrid};

/// Errors mapped onto process exit codes: usage 1, data 2, internal 3.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 1,
            RunError::Data(_) => 2,
            RunError::Internal(_) => 3,
        }
    }
}

impl From<DatasetError> for RunError {
    fn from(e: DatasetError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<EvaluationError> for RunError {
    fn from(e: EvaluationError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<FusionError> for RunError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Frame(inner) => RunError::Data(inner.to_string()),
        }
    }
}

impl From<AssociationError> for RunError {
    fn from(e: AssociationError) -> Self {
        match e {
            AssociationError::MissingSegmentClass { .. }
            | AssociationError::UnknownClass { .. }
            | AssociationError::Frame(_) => RunError::Data(e.to_string()),
            other => RunError::Internal(other.to_string()),
        }
    }
}

/// All reconstruction tunables, echoed to `run.cfg` for provenance.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub voxel_size: f64,
    /// Defaults to 4 * voxel_size when not set.
    pub truncation: Option<f64>,
    pub w_max: f32,
    pub w_frame: f32,
    pub new_instance_likelihood: f64,
    pub min_segment_pixels: usize,
    pub depth_range: DepthRange,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.05,
            truncation: None,
            w_max: 128.0,
            w_frame: 1.0,
            new_instance_likelihood: 0.25,
            min_segment_pixels: 50,
            depth_range: DepthRange::default(),
        }
    }
}

impl RunConfig {
    pub fn effective_truncation(&self) -> f64 {
        self.truncation.unwrap_or(4.0 * self.voxel_size)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let usage = |msg: String| Err(RunError::Usage(msg));
        if self.voxel_size <= 0.0 {
            return usage(format!("voxel-size must be positive, got {}", self.voxel_size));
        }
        let tau = self.effective_truncation();
        if tau < 2.0 * self.voxel_size {
            return usage(format!(
                "truncation {tau} must be at least 2 * voxel-size ({})",
                2.0 * self.voxel_size
            ));
        }
        if self.w_max <= 0.0 || self.w_frame <= 0.0 {
            return usage("w-max and frame weight must be positive".into());
        }
        if !(self.new_instance_likelihood > 0.0 && self.new_instance_likelihood < 1.0) {
            return usage(format!(
                "new-instance-likelihood must be in (0, 1), got {}",
                self.new_instance_likelihood
            ));
        }
        if self.depth_range.min <= 0.0 || self.depth_range.max <= self.depth_range.min {
            return usage(format!(
                "depth range [{}, {}] is invalid",
                self.depth_range.min, self.depth_range.max
            ));
        }
        Ok(())
    }

    pub fn echo_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "voxel-size {}", self.voxel_size);
        let _ = writeln!(out, "truncation {}", self.effective_truncation());
        let _ = writeln!(out, "w-max {}", self.w_max);
        let _ = writeln!(out, "w-frame {}", self.w_frame);
        let _ = writeln!(out, "new-instance-likelihood {}", self.new_instance_likelihood);
        let _ = writeln!(out, "min-segment-pixels {}", self.min_segment_pixels);
        let _ = writeln!(out, "depth-min {}", self.depth_range.min);
        let _ = writeln!(out, "depth-max {}", self.depth_range.max);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructSummary {
    pub frames: usize,
    pub instances: usize,
    pub observed_voxels: usize,
    pub assoc_ms_total: f64,
    pub fuse_ms_total: f64,
}

impl ReconstructSummary {
    pub fn frames_per_second(&self) -> f64 {
        let total_s = (self.assoc_ms_total + self.fuse_ms_total) / 1000.0;
        if total_s > 0.0 {
            self.frames as f64 / total_s
        } else {
            0.0
        }
    }
}

/// Streams a sequence through associate -> integrate and writes
/// `map.panvox`, `registry.txt`, `association.log`, `timing.log` and
/// `run.cfg` into `out_dir`.
pub fn reconstruct(
    seq_dir: &Path,
    out_dir: &Path,
    config: &RunConfig,
) -> Result<ReconstructSummary, RunError> {
    config.validate()?;
    let labels = LabelMap::load(&seq_dir.join("labels.txt"))
        .map_err(|e| RunError::Data(format!("labels.txt: {e}")))?;
    let loader = SequenceLoader::open(seq_dir, &labels)?;
    if loader.is_empty() {
        return Err(RunError::Data(format!("no frames in {}", seq_dir.display())));
    }

    let mut grid = VoxelBlockGrid::new(
        config.voxel_size,
        config.effective_truncation(),
        config.w_max,
        labels.n_classes(),
    );
    let mut registry = InstanceRegistry::new(&labels);
    let assoc_config = AssociationConfig {
        new_instance_likelihood: config.new_instance_likelihood,
        min_segment_pixels: config.min_segment_pixels,
        depth_range: config.depth_range,
    };
    let fusion_config = FusionConfig { w_frame: config.w_frame, depth_range: config.depth_range };

    let mut association_log = String::new();
    let mut timing_log = String::new();
    let mut frames = 0usize;
    let (mut assoc_ms_total, mut fuse_ms_total) = (0.0f64, 0.0f64);

    for (index, frame) in loader.stream_prefetched() {
        let frame = frame?;

        let t0 = Instant::now();
        let result = associate(&frame, &grid, &mut registry, &labels, &assoc_config)?;
        let assoc_ms = t0.elapsed().as_secs_f64() * 1000.0;

        let t1 = Instant::now();
        integrate_frame(&mut grid, &frame, &result, &fusion_config)?;
        let fuse_ms = t1.elapsed().as_secs_f64() * 1000.0;

        for (&seg, &inst) in &result.mapping {
            let class = frame.segment_classes.get(&seg).copied().unwrap_or(0);
            let kind = if result.births.contains(&seg) {
                "birth"
            } else if inst == 0 {
                "stuff"
            } else {
                "match"
            };
            let _ = writeln!(
                association_log,
                "frame {index} seg {seg} class {class} -> inst {inst} {kind}"
            );
        }
        let _ = writeln!(timing_log, "frame {index} assoc_ms {assoc_ms:.3} fuse_ms {fuse_ms:.3}");
        assoc_ms_total += assoc_ms;
        fuse_ms_total += fuse_ms;
        frames += 1;
    }

    let write = |name: &str, contents: &[u8]| -> Result<(), RunError> {
        let path = out_dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| RunError::Data(format!("writing {}: {e}", path.display())))
    };
    std::fs::create_dir_all(out_dir)
        .map_err(|e| RunError::Data(format!("creating {}: {e}", out_dir.display())))?;

    let mut dump = Vec::new();
    write_dump(&mut dump, grid.voxel_size(), grid.n_classes(), &grid.dump_records(&labels))
        .map_err(|e| RunError::Internal(e.to_string()))?;
    write("map.panvox", &dump)?;
    write("registry.txt", registry.summary_text(&labels).as_bytes())?;
    write("association.log", association_log.as_bytes())?;
    write("timing.log", timing_log.as_bytes())?;
    write("run.cfg", config.echo_text().as_bytes())?;

    Ok(ReconstructSummary {
        frames,
        instances: registry.len(),
        observed_voxels: grid.observed_voxel_count(),
        assoc_ms_total,
        fuse_ms_total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Tsv,
}

/// Compares two voxel dumps and renders the PQ report.
pub fn evaluate(
    pred_path: &Path,
    gt_path: &Path,
    labels_path: &Path,
    format: ReportFormat,
) -> Result<String, RunError> {
    let labels = LabelMap::load(labels_path)
        .map_err(|e| RunError::Data(format!("{}: {e}", labels_path.display())))?;
    let open = |path: &Path| -> Result<crate::voxel::Dump, RunError> {
        let file = std::fs::File::open(path)
            .map_err(|e| RunError::Data(format!("{}: {e}", path.display())))?;
        read_dump(std::io::BufReader::new(file))
            .map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
    };
    let pred_dump = open(pred_path)?;
    let gt_dump = open(gt_path)?;
    if pred_dump.voxel_size != gt_dump.voxel_size {
        return Err(RunError::Data(format!(
            "voxel size mismatch: prediction {} vs ground truth {}",
            pred_dump.voxel_size, gt_dump.voxel_size
        )));
    }
    let pred = LabeledVolume::from_dump(&pred_dump);
    let gt = LabeledVolume::from_dump(&gt_dump);
    let stats = match_segments(&pred, &gt, &labels)?;
    let report = panoptic_quality(&stats);
    Ok(match format {
        ReportFormat::Table => report.to_table(&labels),
        ReportFormat::Tsv => report.to_tsv(),
    })
}

/// Generates a synthetic sequence from a scene spec file.
pub fn synth(spec_path: &Path, out_dir: &Path, seed: u64) -> Result<SynthOutput, RunError> {
    let spec = SceneSpec::load(spec_path)?;
    Ok(generate_synthetic(&spec, out_dir, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_echo() {
        let config = RunConfig::default();
        config.validate().unwrap();
        assert_eq!(config.effective_truncation(), 0.2);
        let echo = config.echo_text();
        assert!(echo.contains("voxel-size 0.05"));
        assert!(echo.contains("truncation 0.2"));
        assert!(echo.contains("w-max 128"));
        assert!(echo.contains("new-instance-likelihood 0.25"));
        assert!(echo.contains("min-segment-pixels 50"));
        assert!(echo.contains("depth-max 8"));
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let bad = RunConfig { voxel_size: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(RunError::Usage(_))));
        let bad = RunConfig { truncation: Some(0.05), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RunConfig { new_instance_likelihood: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Usage("x".into()).exit_code(), 1);
        assert_eq!(RunError::Data("x".into()).exit_code(), 2);
        assert_eq!(RunError::Internal("x".into()).exit_code(), 3);
    }
}
