use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::Serialize;

use atomsim::load_config;
use atomsim::optics::{encircled_energy, psf_to_mtf, pupil_field, pupil_to_psf, OpticalConfig, AIRY_DARK_RINGS};
use atomsim::ScalarField2D;

use crate::ReportOutput;

#[derive(Debug, Clone, Args)]
pub struct PsfArgs {
    /// Take the optics from this configuration instead of the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid size in camera pixels.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    /// Include the PSF and MTF grids in the report.
    #[arg(long)]
    pub grids: bool,
    #[command(flatten)]
    pub output: ReportOutput,
}

#[derive(Debug, Clone, Serialize)]
pub struct RingEnergy {
    pub ring: usize,
    /// Dark-ring radius in camera pixels.
    pub radius: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RadialEnergy {
    pub radius: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    /// Row-major samples.
    pub data: Vec<f64>,
}

impl From<ScalarField2D> for Grid {
    fn from(f: ScalarField2D) -> Self {
        Self {
            width: f.width(),
            height: f.height(),
            data: f.into_vec(),
        }
    }
}

/// PSF summary sampled at camera pixels. The PSF is centred at
/// `(size/2, size/2)` plus the tilt shift; the MTF has zero frequency at
/// index (0, 0).
#[derive(Debug, Clone, Serialize)]
pub struct PsfReport {
    pub size: usize,
    pub pupil_radius_fraction: f64,
    pub centre: (f64, f64),
    pub peak: f64,
    /// Energy inside each of the first three dark Airy rings.
    pub rings: Vec<RingEnergy>,
    /// Energy inside whole-pixel radii.
    pub profile: Vec<RadialEnergy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psf: Option<Grid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtf: Option<Grid>,
}

pub fn psf_report(optics: &OpticalConfig, size: usize, grids: bool) -> Result<PsfReport> {
    if size < 8 {
        bail!("--size must be at least 8");
    }
    optics.validate()?;
    let fraction = optics.pupil_radius_fraction;
    let psf = pupil_to_psf(&pupil_field(&optics.zernike, fraction, size, size));
    let (dx, dy) = optics.tilt_shift();
    let centre = ((size / 2) as f64 + dy, (size / 2) as f64 + dx);
    let rings = AIRY_DARK_RINGS
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let radius = z / fraction;
            RingEnergy {
                ring: k + 1,
                radius,
                energy: encircled_energy(&psf, centre, radius),
            }
        })
        .collect();
    let reach = (AIRY_DARK_RINGS[2] / fraction).ceil() as usize;
    let profile = (1..=reach.min(size / 2))
        .map(|r| RadialEnergy {
            radius: r as f64,
            energy: encircled_energy(&psf, centre, r as f64),
        })
        .collect();
    let mtf = grids.then(|| Grid::from(psf_to_mtf(&psf)));
    Ok(PsfReport {
        size,
        pupil_radius_fraction: fraction,
        centre,
        peak: psf.max(),
        rings,
        profile,
        psf: grids.then(|| Grid::from(psf)),
        mtf,
    })
}

pub fn run_psf(args: &PsfArgs) -> Result<()> {
    let optics = match &args.config {
        Some(path) => load_config(path)?.optics,
        None => OpticalConfig::default(),
    };
    args.output.emit(&psf_report(&optics, args.size, args.grids)?)
}
