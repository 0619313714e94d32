//! Command-line frontend: batch frame generation and calibration fits.
//!
//! Every subcommand is a plain function of its arguments so the binary and
//! the tests drive exactly the same code.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use atomsim::config::CameraKind;
use atomsim::io::ImageFormat;

mod fit;
mod generate;
mod images;
mod psf;

pub use fit::{
    fit_mean_spot, rice_bin_width, run_fit_gain, run_fit_hist, run_fit_zernike, FitGainArgs, FitHistArgs, FitZernikeArgs,
};
pub use generate::{generate_corpus, run_generate, GenerateArgs};
pub use images::{load_image_dir, mean_image};
pub use psf::{psf_report, run_psf, PsfArgs, PsfReport};

/// Environment variable selecting the worker count when `--threads` is absent.
pub const THREADS_ENV: &str = "ATOMSIM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "atomsim", version, about = "Fluorescence images of neutral-atom arrays and the fits that calibrate them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corpus of frames with ground-truth sidecars.
    Generate(GenerateArgs),
    /// Fit the three-component mixture to per-site ROI sums.
    FitHist(FitHistArgs),
    /// Fit the EM-gain tail of dark-frame pixel values.
    FitGain(FitGainArgs),
    /// Fit aberration coefficients to the averaged spot of one site.
    FitZernike(FitZernikeArgs),
    /// Tabulate the point-spread function and its encircled energy.
    Psf(PsfArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => run_generate(&args),
        Command::FitHist(args) => run_fit_hist(&args),
        Command::FitGain(args) => run_fit_gain(&args),
        Command::FitZernike(args) => run_fit_zernike(&args),
        Command::Psf(args) => run_psf(&args),
    }
}

/// Where a report goes.
#[derive(Debug, Clone, Args)]
pub struct ReportOutput {
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ReportOutput {
    pub fn emit<T: Serialize>(&self, report: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        match &self.out {
            Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

pub fn parse_camera(s: &str) -> Result<CameraKind, String> {
    s.parse()
}

pub fn parse_format(s: &str) -> Result<ImageFormat, String> {
    s.parse()
}

/// Worker count: the flag, else `ATOMSIM_THREADS`, else all cores. Zero
/// also means all cores.
pub fn worker_count(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV} must be a non-negative integer, got `{v}`")),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => bail!("{THREADS_ENV}: {e}"),
    }
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("cannot start worker pool")
}

pub fn frame_stem(index: u64) -> String {
    format!("frame_{index:06}")
}

pub fn image_path(dir: &Path, index: u64, format: ImageFormat) -> PathBuf {
    dir.join(format!("{}.{}", frame_stem(index), format.extension()))
}

pub fn truth_path(dir: &Path, index: u64) -> PathBuf {
    dir.join(format!("{}.truth.json", frame_stem(index)))
}
