//! Calibration tools: ROI-sum histograms and their three-component mixture
//! model, the EM-gain tail fit, and Zernike coefficients from averaged spots.

mod mixture;
pub mod simplex;
mod tail;
mod zernike_fit;

pub use mixture::{
    fit_three_component, mixture_pdf, pdf_exp_decay, pdf_lost, ThreeComponentFit, ThreeComponentInit,
    ThreeComponentUncertainty,
};
pub use simplex::{minimize, SimplexOptions, SimplexResult};
pub use tail::{auto_tail_range, fit_em_tail, EmTailFit};
pub use zernike_fit::{fit_zernike, TermEstimate, ZernikeFit, ZernikeFitOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cameras::ImageU16;
use crate::experiment::Site;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FittingError {
    #[error("site ({row}, {col}) is closer than {radius} pixels to the image border")]
    SiteNearBorder { row: usize, col: usize, radius: f64 },
    #[error("images have differing sizes")]
    MixedImageSizes,
    #[error("fit range contains no populated bins")]
    EmptyRange,
    #[error("tail slope is not negative ({slope}); no decaying exponential to fit")]
    NonDecayingTail { slope: f64 },
    #[error("degenerate data: {0}")]
    Degenerate(&'static str),
    #[error("optimizer did not converge within {evaluations} evaluations")]
    NonConvergence { evaluations: usize },
    #[error("spot of {width}x{height} pixels is smaller than the PSF support of {needed} pixels")]
    SpotTooSmall {
        width: usize,
        height: usize,
        needed: usize,
    },
    #[error("invalid fit parameter `{field}`: {constraint}")]
    Invalid {
        field: &'static str,
        constraint: &'static str,
    },
}

/// Equal-width histogram with half-open bins `[origin + k·w, origin + (k+1)·w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub origin: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins every value; the range is chosen to cover them all.
    pub fn from_values(values: &[f64], bin_width: f64) -> Result<Self, FittingError> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(FittingError::Invalid {
                field: "bin_width",
                constraint: "must be positive",
            });
        }
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Err(FittingError::Degenerate("no finite values to bin"));
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let origin = (lo / bin_width).floor() * bin_width;
        let bins = ((hi - origin) / bin_width).floor() as usize + 1;
        Ok(Self::with_bins(&finite, bin_width, origin, bins))
    }

    /// Histogram of integer-valued samples with unit bins centred on integers.
    pub fn from_integers(values: &[u16]) -> Self {
        let lo = values.iter().copied().min().unwrap_or(0);
        let hi = values.iter().copied().max().unwrap_or(0);
        let mut counts = vec![0u64; usize::from(hi - lo) + 1];
        for v in values {
            counts[usize::from(v - lo)] += 1;
        }
        Self {
            bin_width: 1.0,
            origin: f64::from(lo) - 0.5,
            counts,
        }
    }

    /// Fixed binning; values outside `[origin, origin + bins·width)` are dropped.
    pub fn with_bins(values: &[f64], bin_width: f64, origin: f64, bins: usize) -> Self {
        let mut h = Self {
            bin_width,
            origin,
            counts: vec![0; bins],
        };
        for &v in values {
            if let Some(i) = h.bin_of(v) {
                h.counts[i] += 1;
            }
        }
        h
    }

    pub fn bin_of(&self, value: f64) -> Option<usize> {
        let k = ((value - self.origin) / self.bin_width).floor();
        if k >= 0.0 && k < self.counts.len() as f64 {
            Some(k as usize)
        } else {
            None
        }
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.origin + (bin as f64 + 0.5) * self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Merges groups of `factor` adjacent bins.
    pub fn rebin(&self, factor: usize) -> Self {
        assert!(factor > 0);
        Self {
            bin_width: self.bin_width * factor as f64,
            origin: self.origin,
            counts: self.counts.chunks(factor).map(|c| c.iter().sum()).collect(),
        }
    }
}

/// Offsets `(drow, dcol)` of the pixels whose centres lie within `radius`.
pub fn roi_offsets(radius: f64) -> Vec<(i64, i64)> {
    let r = radius.max(0.0).floor() as i64;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if ((dr * dr + dc * dc) as f64) <= r2 {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// ROI sums for every `(image, site)` pair, image-major.
pub fn roi_sums(images: &[ImageU16], sites: &[Site], radius: f64) -> Result<Vec<f64>, FittingError> {
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    let (w, h) = (first.width(), first.height());
    if images.iter().any(|im| (im.width(), im.height()) != (w, h)) {
        return Err(FittingError::MixedImageSizes);
    }
    let offsets = roi_offsets(radius);
    let r = radius.max(0.0).floor() as usize;
    for s in sites {
        if s.row < r || s.col < r || s.row + r >= h || s.col + r >= w {
            return Err(FittingError::SiteNearBorder {
                row: s.row,
                col: s.col,
                radius,
            });
        }
    }
    let mut out = Vec::with_capacity(images.len() * sites.len());
    for img in images {
        for s in sites {
            let sum: u64 = offsets
                .iter()
                .map(|&(dr, dc)| {
                    u64::from(img.get((s.row as i64 + dr) as usize, (s.col as i64 + dc) as usize))
                })
                .sum();
            out.push(sum as f64);
        }
    }
    Ok(out)
}

/// Photons reaching the ROI per exposure for a peak separation `d` in
/// counts: `d·preamp/(QE·gain)`.
pub fn photons_in_roi(d: f64, quantum_efficiency: f64, em_gain: f64, preamp_gain: f64) -> f64 {
    d * preamp_gain / (quantum_efficiency * em_gain)
}

/// Photons emitted per atom per second that explain a peak separation `d`:
/// `d·preamp/(QE·gain·exposure·Ω·roi_fraction)`.
pub fn photons_from_separation(
    d: f64,
    quantum_efficiency: f64,
    em_gain: f64,
    preamp_gain: f64,
    exposure: f64,
    solid_angle: f64,
    roi_fraction: f64,
) -> f64 {
    photons_in_roi(d, quantum_efficiency, em_gain, preamp_gain) / (exposure * solid_angle * roi_fraction)
}

/// Standard normal density.
pub(crate) fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `ln P(Z > z)` for a standard normal `Z`, accurate far into the tail.
pub(crate) fn ln_upper_tail(z: f64) -> f64 {
    if z < 30.0 {
        (0.5 * libm::erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - (z * (2.0 * std::f64::consts::PI).sqrt()).ln() + series.ln()
    }
}

/// `ln(P(Z > a) − P(Z > b))` for `a < b`.
pub(crate) fn ln_normal_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a > 0.0 {
        let (la, lb) = (ln_upper_tail(a), ln_upper_tail(b));
        la + (-(lb - la).exp()).ln_1p()
    } else if b < 0.0 {
        ln_normal_interval(-b, -a)
    } else {
        let q = 1.0 - (0.5 * libm::erfc(-a / std::f64::consts::SQRT_2)) - 0.5 * libm::erfc(b / std::f64::consts::SQRT_2);
        // P(Z > a) − P(Z > b) = 1 − P(Z < a) − P(Z > b)
        q.ln()
    }
}
