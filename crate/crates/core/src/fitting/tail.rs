//! Exponential tail of dark-frame pixel histograms.
//!
//! Pixels that received exactly one electron before multiplication follow
//! `s/g·exp(−x/g)` above the readout peak, so the log-counts there fall on a
//! line of slope `−1/g`.

use serde::{Deserialize, Serialize};

use super::{FittingError, Histogram};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmTailFit {
    /// Decay length of the tail in counts.
    pub g: f64,
    /// Standard error of `g` from the weighted regression.
    pub g_uncertainty: f64,
    /// Tail amplitude `s` of `s/g·exp(−x/g)`, in counts per unit of `x`.
    pub scale: f64,
    pub range: (f64, f64),
    pub bins_used: usize,
}

impl EmTailFit {
    /// Multiplication gain in electrons: `g × preamp`.
    pub fn electron_gain(&self, preamp_gain: f64) -> f64 {
        self.g * preamp_gain
    }
}

/// Default tail window: from five readout widths above the histogram mode
/// to the last bin holding at least ten values. The width is taken from the
/// half-maximum point on the left of the mode, which the tail does not touch.
pub fn auto_tail_range(hist: &Histogram) -> Result<(f64, f64), FittingError> {
    let counts = &hist.counts;
    let Some(mode) = (0..counts.len()).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))) else {
        return Err(FittingError::EmptyRange);
    };
    if counts[mode] == 0 {
        return Err(FittingError::EmptyRange);
    }
    let half = counts[mode] / 2;
    let mut left = mode;
    while left > 0 && counts[left] > half {
        left -= 1;
    }
    let hwhm = ((mode - left) as f64).max(0.5) * hist.bin_width;
    let sigma = hwhm / 1.1774;
    let start = hist.center(mode) + 5.0 * sigma;
    let last = (0..counts.len()).rev().find(|&i| counts[i] >= 10).unwrap_or(mode);
    let end = hist.origin + (last + 1) as f64 * hist.bin_width;
    if end <= start {
        return Err(FittingError::EmptyRange);
    }
    Ok((start, end))
}

/// Fits `ln(count) = ln(s·w/g) − x/g` over bins whose centres lie in `range`
/// (or [`auto_tail_range`]). Each bin is weighted by its expected count, the
/// inverse variance of a log-Poisson count: the observed count at first,
/// then the fitted one.
pub fn fit_em_tail(hist: &Histogram, range: Option<(f64, f64)>) -> Result<EmTailFit, FittingError> {
    let range = match range {
        Some(r) => r,
        None => auto_tail_range(hist)?,
    };
    if !(range.0 < range.1) {
        return Err(FittingError::Invalid {
            field: "range",
            constraint: "lower bound must be below upper bound",
        });
    }
    let points: Vec<(f64, f64, f64)> = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0)
        .map(|(i, c)| (hist.center(i), *c as f64))
        .filter(|(x, _)| *x >= range.0 && *x <= range.1)
        .map(|(x, c)| (x, c.ln(), c))
        .collect();
    if points.len() < 2 {
        return Err(FittingError::EmptyRange);
    }
    let mut weights: Vec<f64> = points.iter().map(|p| p.2).collect();
    let mut line = weighted_line(&points, &weights)?;
    // Observed counts as weights favour bins that fluctuated upwards, which
    // flattens the slope; re-weighting by the fitted counts removes that.
    for _ in 0..REWEIGHT_PASSES {
        if !(line.slope < 0.0) {
            break;
        }
        for (w, p) in weights.iter_mut().zip(&points) {
            *w = (line.intercept + line.slope * p.0).exp();
        }
        line = weighted_line(&points, &weights)?;
    }
    let Line { slope, intercept, sxx } = line;
    if !(slope < 0.0) {
        return Err(FittingError::NonDecayingTail { slope });
    }
    let g = -1.0 / slope;
    // With inverse-variance weights the slope variance is 1/Sxx, scaled by
    // the weighted residual variance when it exceeds the Poisson level.
    let dof = points.len().saturating_sub(2).max(1) as f64;
    let chi2: f64 = points
        .iter()
        .zip(&weights)
        .map(|(p, w)| w * (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let slope_sd = ((chi2 / dof).max(1.0) / sxx).sqrt();
    Ok(EmTailFit {
        g,
        g_uncertainty: slope_sd * g * g,
        scale: intercept.exp() * g / hist.bin_width,
        range,
        bins_used: points.len(),
    })
}

const REWEIGHT_PASSES: usize = 3;

struct Line {
    slope: f64,
    intercept: f64,
    sxx: f64,
}

fn weighted_line(points: &[(f64, f64, f64)], weights: &[f64]) -> Result<Line, FittingError> {
    let sw: f64 = weights.iter().sum();
    let mx = points.iter().zip(weights).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let my = points.iter().zip(weights).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(weights).map(|(p, w)| w * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().zip(weights).map(|(p, w)| w * (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(FittingError::Degenerate("tail range spans a single abscissa"));
    }
    let slope = sxy / sxx;
    Ok(Line {
        slope,
        intercept: my - slope * mx,
        sxx,
    })
}
