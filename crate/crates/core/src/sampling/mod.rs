//! Probability-distribution samplers used throughout the imaging pipeline.
//!
//! Every sampler is a pure function of an explicit [`RandomState`] and its
//! parameters. Poisson draws use Knuth's inter-arrival counting (with a
//! transformed-rejection sampler for very large means), Gaussian draws use
//! the Box–Muller transform, Gamma draws use Marsaglia–Tsang, and the loss
//! time, EM gain and Gumbel variables are produced by inverting their CDFs.

mod incgamma;
mod rng;

pub use incgamma::{
    inverse_regularized_gamma_upper, inverse_regularized_gamma_upper_with,
    regularized_gamma_upper, GammaInverse, DEFAULT_STEP_THRESHOLD, MAX_SCHRODER_ITERATIONS,
};
pub use rng::{uniform_next, RandomState};

use std::f64::consts::PI;

use thiserror::Error;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Above this mean the Poisson sampler switches from inter-arrival counting
/// to transformed rejection.
pub const POISSON_REJECTION_THRESHOLD: f64 = 500.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("Schröder iteration did not converge after {iterations} iterations")]
    NonConvergence { iterations: u32 },
}

fn param(name: &'static str, reason: &'static str) -> SamplingError {
    SamplingError::Parameter { name, reason }
}

/// Draws from Poisson(`mean`).
pub fn sample_poisson(state: &mut RandomState, mean: f64) -> Result<u64, SamplingError> {
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(param("mean", "must be finite and non-negative"));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    if mean < POISSON_REJECTION_THRESHOLD {
        Ok(poisson_knuth(state, mean))
    } else {
        Ok(poisson_ptrs(state, mean))
    }
}

fn poisson_knuth(state: &mut RandomState, mean: f64) -> u64 {
    let limit = (-mean).exp();
    let mut product = state.uniform();
    let mut k = 0;
    while product > limit {
        product *= state.uniform();
        k += 1;
    }
    k
}

/// Hörmann's transformed rejection with squeeze (PTRS).
fn poisson_ptrs(state: &mut RandomState, mean: f64) -> u64 {
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = state.uniform() - 0.5;
        let v = state.uniform();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -mean + k * loglam - libm::lgamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

/// Draws from Normal(`mean`, `std`²). `std = 0` returns `mean` exactly.
pub fn sample_gaussian(state: &mut RandomState, mean: f64, std: f64) -> Result<f64, SamplingError> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(param("std", "must be finite and non-negative"));
    }
    if std == 0.0 {
        return Ok(mean);
    }
    Ok(mean + std * standard_normal(state))
}

/// Box–Muller; the second deviate of each pair is kept for the next call.
pub(crate) fn standard_normal(state: &mut RandomState) -> f64 {
    if let Some(z) = state.take_spare_normal() {
        return z;
    }
    let u1 = 1.0 - state.uniform();
    let u2 = state.uniform();
    let radius = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    state.set_spare_normal(radius * s);
    radius * c
}

/// Draws from Gamma(`shape`, `scale`).
pub fn sample_gamma(state: &mut RandomState, shape: f64, scale: f64) -> Result<f64, SamplingError> {
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(param("shape", "must be positive"));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(param("scale", "must be positive"));
    }
    if shape < 1.0 {
        let boosted = marsaglia_tsang(state, shape + 1.0);
        let u = state.uniform_open();
        return Ok(scale * boosted * u.powf(1.0 / shape));
    }
    Ok(scale * marsaglia_tsang(state, shape))
}

fn marsaglia_tsang(state: &mut RandomState, shape: f64) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(state);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = state.uniform_open();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Inverse Gumbel CDF: `μ − β·ln(−ln r)`.
#[inline]
pub fn gumbel_inverse_cdf(r: f64, mu: f64, beta: f64) -> f64 {
    mu - beta * (-r.ln()).ln()
}

/// Location that gives a Gumbel distribution of scale `beta` zero mean.
#[inline]
pub fn zero_mean_gumbel_location(beta: f64) -> f64 {
    -beta * EULER_GAMMA
}

/// Draws from Gumbel(`mu`, `beta`) by inverse-CDF sampling.
pub fn sample_gumbel(state: &mut RandomState, mu: f64, beta: f64) -> Result<f64, SamplingError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(param("beta", "must be positive"));
    }
    Ok(gumbel_inverse_cdf(state.uniform_open(), mu, beta))
}

/// Zero-mean Gumbel draw of scale `beta`; `beta = 0` yields 0.
pub fn sample_gumbel_zero_mean(state: &mut RandomState, beta: f64) -> Result<f64, SamplingError> {
    if beta == 0.0 {
        return Ok(0.0);
    }
    sample_gumbel(state, zero_mean_gumbel_location(beta), beta)
}

fn check_survival(p: f64) -> Result<(), SamplingError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(param("p", "survival probability must lie in (0, 1]"))
    }
}

/// Inverse CDF of the loss-time density `p^t·ln p/(p − 1)` on `[0, 1]`:
/// `t = log_p((p − 1)·r + 1)`. `p = 1` is the uniform limit `t = r`.
pub fn loss_time_inverse_cdf(r: f64, p: f64) -> Result<f64, SamplingError> {
    check_survival(p)?;
    if p == 1.0 {
        return Ok(r);
    }
    Ok((((p - 1.0) * r + 1.0).ln() / p.ln()).clamp(0.0, 1.0))
}

/// Loss-time CDF `(p^t − 1)/(p − 1)`.
pub fn loss_time_cdf(t: f64, p: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    if p == 1.0 {
        t
    } else {
        (p.powf(t) - 1.0) / (p - 1.0)
    }
}

/// Loss-time density `p^t·ln p/(p − 1)` on `[0, 1]`.
pub fn loss_time_pdf(t: f64, p: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    if p == 1.0 {
        1.0
    } else {
        p.powf(t) * p.ln() / (p - 1.0)
    }
}

/// Fraction of the exposure an atom survived before being lost, for
/// survival probability `p`.
pub fn sample_loss_time(state: &mut RandomState, p: f64) -> Result<f64, SamplingError> {
    check_survival(p)?;
    loss_time_inverse_cdf(state.uniform(), p)
}

/// Number of secondary electrons leaving the EM register for `primaries`
/// input electrons at mean gain `gain`.
///
/// The output follows `P(n|x) = n^{x−1}·e^{−n/g}/(g^x·(x−1)!)`. A single
/// primary is sampled as `−g·ln r`; more primaries invert `Q(x, n/g) = r`
/// to a precision of a tenth of an electron. Zero primaries yield zero.
pub fn sample_em_gain(
    state: &mut RandomState,
    primaries: u64,
    gain: f64,
) -> Result<f64, SamplingError> {
    if !(gain >= 1.0 && gain.is_finite()) {
        return Err(param("gain", "must be finite and at least 1"));
    }
    match primaries {
        0 => Ok(0.0),
        1 => Ok(-gain * state.uniform_open().ln()),
        x => {
            let r = state.uniform_open();
            let threshold = 1.0 / (100.0 * gain * gain);
            inverse_regularized_gamma_upper_with(x, r, threshold).map(|s| gain * s.t)
        }
    }
}
