use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use atomsim::cameras::CameraConfig;
use atomsim::experiment::build_site_map;
use atomsim::fitting::{
    fit_em_tail, fit_three_component, fit_zernike, photons_in_roi, roi_sums, EmTailFit, Histogram,
    ThreeComponentFit, ZernikeFit, ZernikeFitOptions,
};
use atomsim::io::ImageFormat;
use atomsim::{load_config, ImageU16};

use crate::images::{load_image_dir, mean_image};
use crate::{parse_format, ReportOutput};

#[derive(Debug, Clone, Args)]
pub struct FitHistArgs {
    /// Configuration that produced the images; supplies the site map.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory of images.
    #[arg(long)]
    pub images: PathBuf,
    /// ROI radius in pixels.
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    /// Histogram bin width in counts. Defaults to the Rice rule.
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Only read images of this format.
    #[arg(long, value_parser = parse_format)]
    pub format: Option<ImageFormat>,
    #[command(flatten)]
    pub output: ReportOutput,
}

#[derive(Debug, Serialize)]
struct FitHistReport {
    frames: usize,
    sites: usize,
    radius: f64,
    fit: ThreeComponentFit,
    /// Photons collected in the ROI implied by the peak separation (EMCCD only).
    photons_in_roi: Option<f64>,
    histogram: Histogram,
}

/// Bin width giving `2·n^{1/3}` bins across the data.
pub fn rice_bin_width(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = (2.0 * (values.len() as f64).cbrt()).ceil().max(1.0);
    ((hi - lo) / bins).max(1.0)
}

pub fn run_fit_hist(args: &FitHistArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let (w, h) = config.camera.frame_dims();
    let sites = build_site_map(&config.experiment, w, h)?;
    let images = load_image_dir(&args.images, args.format)?;
    let sums = roi_sums(&images, &sites, args.radius)?;
    let bin_width = args.bin_width.unwrap_or_else(|| rice_bin_width(&sums));
    let histogram = Histogram::from_values(&sums, bin_width)?;
    let fit = fit_three_component(&histogram, None)?;
    let photons = match &config.camera {
        CameraConfig::Emccd(c) => Some(photons_in_roi(fit.d, c.quantum_efficiency, c.em_gain, c.preamp_gain)),
        CameraConfig::Cmos(_) => None,
    };
    args.output.emit(&FitHistReport {
        frames: images.len(),
        sites: sites.len(),
        radius: args.radius,
        fit,
        photons_in_roi: photons,
        histogram,
    })
}

#[derive(Debug, Clone, Args)]
pub struct FitGainArgs {
    /// Directory of dark frames.
    #[arg(long)]
    pub images: PathBuf,
    /// Configuration of the camera; supplies the preamp gain and the
    /// configured gain for comparison.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preamp gain in electrons per count; overrides the configuration.
    #[arg(long)]
    pub preamp_gain: Option<f64>,
    /// Tail window in counts. Defaults to five readout widths above the
    /// mode up to the last well-populated bin.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub range: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<ImageFormat>,
    #[command(flatten)]
    pub output: ReportOutput,
}

#[derive(Debug, Serialize)]
struct FitGainReport {
    frames: usize,
    pixels: usize,
    fit: EmTailFit,
    preamp_gain: Option<f64>,
    /// Fitted multiplication gain in electrons.
    electron_gain: Option<f64>,
    configured_em_gain: Option<f64>,
}

pub fn run_fit_gain(args: &FitGainArgs) -> Result<()> {
    let emccd = match &args.config {
        Some(path) => match load_config(path)?.camera {
            CameraConfig::Emccd(c) => Some(c),
            CameraConfig::Cmos(_) => bail!("{}: the EM-gain tail needs an EMCCD camera", path.display()),
        },
        None => None,
    };
    let preamp = args.preamp_gain.or(emccd.as_ref().map(|c| c.preamp_gain));
    let images = load_image_dir(&args.images, args.format)?;
    let pixels: Vec<u16> = images.iter().flat_map(|im| im.as_slice().iter().copied()).collect();
    let histogram = Histogram::from_integers(&pixels);
    let range = args.range.as_ref().map(|r| (r[0], r[1]));
    let fit = fit_em_tail(&histogram, range)?;
    args.output.emit(&FitGainReport {
        frames: images.len(),
        pixels: pixels.len(),
        electron_gain: preamp.map(|p| fit.electron_gain(p)),
        fit,
        preamp_gain: preamp,
        configured_em_gain: emccd.map(|c| c.em_gain),
    })
}

#[derive(Debug, Clone, Args)]
pub struct FitZernikeArgs {
    /// Configuration that produced the images; supplies the optics and sites.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory of images of one atom, averaged before fitting.
    #[arg(long)]
    pub images: PathBuf,
    /// Site to fit. Defaults to the first configured site.
    #[arg(long, num_args = 2, value_names = ["ROW", "COL"])]
    pub site: Option<Vec<usize>>,
    /// Half-size of the square spot window in pixels.
    #[arg(long, default_value_t = 8)]
    pub half_width: usize,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<ImageFormat>,
    #[command(flatten)]
    pub output: ReportOutput,
}

#[derive(Debug, Serialize)]
struct Window {
    row: usize,
    col: usize,
    width: usize,
    height: usize,
}

#[derive(Debug, Serialize)]
struct FitZernikeReport {
    frames: usize,
    site: (usize, usize),
    window: Window,
    fit: ZernikeFit,
}

/// Fits the averaged spot around `site` in a window of half-size `half`,
/// clipped to the frame.
pub fn fit_mean_spot(
    images: &[ImageU16],
    optics: &atomsim::optics::OpticalConfig,
    site: (usize, usize),
    half: usize,
) -> Result<(ZernikeFit, (usize, usize, usize, usize))> {
    let mean = mean_image(images)?;
    let (w, h) = (mean.width(), mean.height());
    if site.0 >= h || site.1 >= w {
        bail!("site ({}, {}) is outside the {w}×{h} frame", site.0, site.1);
    }
    let options = ZernikeFitOptions::window(w, h, site, half);
    let (row, col) = options.window_origin;
    let height = (site.0 + half + 1).min(h) - row;
    let width = (site.1 + half + 1).min(w) - col;
    let spot = mean.crop(row, col, width, height);
    let fit = fit_zernike(&spot, optics, &options)?;
    Ok((fit, (row, col, width, height)))
}

pub fn run_fit_zernike(args: &FitZernikeArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let site = match &args.site {
        Some(s) => (s[0], s[1]),
        None => {
            let (w, h) = config.camera.frame_dims();
            let first = build_site_map(&config.experiment, w, h)?
                .into_iter()
                .next()
                .context("the configuration has no sites; pass --site")?;
            (first.row, first.col)
        }
    };
    let images = load_image_dir(&args.images, args.format)?;
    let (fit, (row, col, width, height)) = fit_mean_spot(&images, &config.optics, site, args.half_width)?;
    args.output.emit(&FitZernikeReport {
        frames: images.len(),
        site,
        window: Window { row, col, width, height },
        fit,
    })
}
