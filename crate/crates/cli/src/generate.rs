use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use atomsim::config::CameraKind;
use atomsim::io::{write_ground_truth, write_image, ImageFormat};
use atomsim::{load_config, Generator};

use crate::{image_path, parse_camera, parse_format, thread_pool, truth_path, worker_count};

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Simulation configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Number of frames; overrides the configuration.
    #[arg(long)]
    pub count: Option<usize>,
    /// Corpus seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Image file format.
    #[arg(long, default_value = "pgm16", value_parser = parse_format)]
    pub format: ImageFormat,
    /// Replace the configured camera with this type's defaults.
    #[arg(long, value_parser = parse_camera)]
    pub camera: Option<CameraKind>,
    /// Worker threads (0 = all cores). Defaults to ATOMSIM_THREADS, else all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Suppress progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Serialize)]
struct GenerateSummary<'a> {
    frames: u64,
    seed: u64,
    format: &'static str,
    camera: &'static str,
    out: &'a Path,
}

pub fn run_generate(args: &GenerateArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(kind) = args.camera {
        config.override_camera(kind);
    }
    if let Some(count) = args.count {
        config.count = count;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output = Some(out.clone());
    }
    let out = config
        .output
        .clone()
        .context("no output directory: pass --out or set `output` in the configuration")?;
    let generator = Generator::new(config)?;
    let count = generator.config().count as u64;
    let seed = generator.config().seed;
    let workers = worker_count(args.threads)?;
    generate_corpus(&generator, seed, 0..count, &out, args.format, workers, !args.quiet)?;
    let summary = GenerateSummary {
        frames: count,
        seed,
        format: match args.format {
            ImageFormat::Pgm16 => "pgm16",
            ImageFormat::Raw => "raw",
        },
        camera: generator.config().camera.kind(),
        out: &out,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

/// Writes frames `indices` and their truth sidecars into `dir`.
///
/// Each frame is addressed by its index, so the files do not depend on the
/// number of workers or the order in which they finish.
pub fn generate_corpus(
    generator: &Generator,
    seed: u64,
    indices: Range<u64>,
    dir: &Path,
    format: ImageFormat,
    workers: usize,
    progress: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let done = AtomicU64::new(0);
    let count = indices.end.saturating_sub(indices.start);
    thread_pool(workers)?.install(|| {
        indices.into_par_iter().try_for_each(|index| -> Result<()> {
            let frame = generator
                .generate_frame(seed, index)
                .with_context(|| format!("frame {index}"))?;
            write_image(&frame.image, image_path(dir, index, format), format)?;
            write_ground_truth(&frame.truth, truth_path(dir, index))?;
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            if progress && (n.is_multiple_of(100) || n == count) {
                eprintln!("generated {n}/{count} frames");
            }
            Ok(())
        })
    })
}
