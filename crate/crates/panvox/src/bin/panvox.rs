use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use panvox::pipeline::{self, ReportFormat, RunConfig, RunError};
use panvox::projection::DepthRange;

/// Online panoptic 3D reconstruction from posed RGB-D sequences.
#[derive(Parser)]
#[command(name = "panvox", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse a sequence into a panoptic voxel map.
    Reconstruct {
        /// Sequence directory (intrinsics.txt, labels.txt, depth/, segm/, pose/).
        seq_dir: PathBuf,
        /// Output directory for map.panvox, registry.txt and logs.
        out_dir: PathBuf,
        /// Voxel edge length in meters.
        #[arg(long, default_value_t = 0.05)]
        voxel_size: f64,
        /// TSDF truncation in meters; defaults to 4 * voxel size.
        #[arg(long)]
        truncation: Option<f64>,
        /// Fusion weight cap per voxel.
        #[arg(long, default_value_t = 128)]
        w_max: u32,
        /// Likelihood of starting a new instance; a match must beat it.
        #[arg(long, default_value_t = 0.25)]
        new_instance_likelihood: f64,
        /// Drop segments smaller than this many pixels.
        #[arg(long, default_value_t = 50)]
        min_segment_pixels: usize,
        /// Minimum valid depth in meters.
        #[arg(long, default_value_t = 0.1)]
        depth_min: f64,
        /// Maximum valid depth in meters.
        #[arg(long, default_value_t = 8.0)]
        depth_max: f64,
    },
    /// Compare a predicted voxel dump against ground truth (Panoptic Quality).
    Evaluate {
        pred: PathBuf,
        gt: PathBuf,
        labels: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Table)]
        format: FormatArg,
    },
    /// Generate a synthetic sequence plus ground truth from a scene spec.
    Synth {
        spec: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Tsv,
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Reconstruct {
            seq_dir,
            out_dir,
            voxel_size,
            truncation,
            w_max,
            new_instance_likelihood,
            min_segment_pixels,
            depth_min,
            depth_max,
        } => {
            let config = RunConfig {
                voxel_size,
                truncation,
                w_max: w_max as f32,
                new_instance_likelihood,
                min_segment_pixels,
                depth_range: DepthRange { min: depth_min, max: depth_max },
                ..Default::default()
            };
            let summary = pipeline::reconstruct(&seq_dir, &out_dir, &config)?;
            println!(
                "reconstructed {} frames: {} instances, {} observed voxels, {:.1} frames/s",
                summary.frames,
                summary.instances,
                summary.observed_voxels,
                summary.frames_per_second()
            );
            println!("outputs in {}", out_dir.display());
            Ok(())
        }
        Command::Evaluate { pred, gt, labels, format } => {
            let format = match format {
                FormatArg::Table => ReportFormat::Table,
                FormatArg::Tsv => ReportFormat::Tsv,
            };
            let report = pipeline::evaluate(&pred, &gt, &labels, format)?;
            print!("{report}");
            Ok(())
        }
        Command::Synth { spec, out_dir, seed } => {
            let output = pipeline::synth(&spec, &out_dir, seed)?;
            println!(
                "generated {} frames, {} objects, {} ground-truth voxels in {}",
                output.frames,
                output.objects,
                output.gt_voxels,
                out_dir.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
