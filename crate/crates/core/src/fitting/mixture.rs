//! Three-component model of ROI-sum histograms: unoccupied sites, atoms that
//! survive the exposure and atoms lost part-way through it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::simplex::{hessian, minimize, SimplexOptions};
use super::{ln_normal_interval, normal_pdf, FittingError, Histogram};

/// Brightness density of an atom lost at a uniformly-decaying time: the
/// survived fraction `t` has density `∝ pᵗ`, mapped linearly onto `[μ₀, μ₁]`.
pub fn pdf_exp_decay(x: f64, p: f64, mu0: f64, mu1: f64) -> f64 {
    if x < mu0 || x > mu1 {
        return 0.0;
    }
    let d = mu1 - mu0;
    let lambda = -p.ln() / d;
    decay_amplitude(p, d) * (-lambda * (x - mu0)).exp()
}

/// `ln p / (d·(p − 1))`, continuous at `p = 1`.
fn decay_amplitude(p: f64, d: f64) -> f64 {
    let q = 1.0 - p;
    if q.abs() < 1e-12 {
        1.0 / d
    } else {
        -p.ln() / (d * q)
    }
}

/// [`pdf_exp_decay`] convolved with a zero-mean Gaussian of width `sigma`.
///
/// Evaluated in log space, so it stays finite for `p` near 0 or 1 and far
/// out in either tail.
pub fn pdf_lost(x: f64, p: f64, mu0: f64, mu1: f64, sigma: f64) -> f64 {
    let d = mu1 - mu0;
    let lambda = -p.ln() / d;
    let shift = lambda * sigma * sigma;
    let z0 = (x - mu0 - shift) / sigma;
    let z1 = (x - mu1 - shift) / sigma;
    let ln = decay_amplitude(p, d).ln() - lambda * (x - mu0) + 0.5 * lambda * shift + ln_normal_interval(z1, z0);
    ln.exp()
}

fn pdf_gaussian(x: f64, mu: f64, sigma: f64) -> f64 {
    normal_pdf((x - mu) / sigma) / sigma
}

/// Starting point for [`fit_three_component`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeComponentInit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma_lost: f64,
}

impl ThreeComponentInit {
    /// Guesses from the two most prominent peaks of the histogram.
    pub fn from_histogram(hist: &Histogram) -> Result<Self, FittingError> {
        let n = hist.counts.len();
        let total = hist.total() as f64;
        if n < 5 || total == 0.0 {
            return Err(FittingError::Degenerate("histogram has too few bins or values"));
        }
        let half = (n / 100).max(1);
        let smooth: Vec<f64> = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(n - 1);
                hist.counts[lo..=hi].iter().sum::<u64>() as f64 / (hi - lo + 1) as f64
            })
            .collect();
        let window = (2 * half + 1) as f64;
        let top = argmax(&smooth);
        // Second peak: the local maximum with the greatest prominence over
        // the valley separating it from the main peak.
        let mut second: Option<(usize, f64)> = None;
        for j in 1..n - 1 {
            if j == top || smooth[j] < smooth[j - 1] || smooth[j] < smooth[j + 1] {
                continue;
            }
            let (lo, hi) = (j.min(top), j.max(top));
            let valley = smooth[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
            let prominence = smooth[j] - valley;
            let threshold = (0.1 * smooth[j]).max(3.0 * (smooth[j] / window).sqrt());
            if prominence > threshold && second.is_none_or(|(_, p)| prominence > p) {
                second = Some((j, prominence));
            }
        }
        let Some((other, _)) = second else {
            return Err(FittingError::Degenerate("histogram does not show two separated peaks"));
        };
        let (i0, i1) = (top.min(other), top.max(other));
        let width = |peak: usize| {
            let level = smooth[peak] / 2.0;
            let mut l = peak;
            while l > 0 && smooth[l] > level {
                l -= 1;
            }
            let mut r = peak;
            while r + 1 < n && smooth[r] > level {
                r += 1;
            }
            // Sides facing the other peak are polluted by lost atoms, so use
            // the outer half-width.
            let outer = if peak == i0 { peak - l } else { r - peak };
            (outer.max(1) as f64 * hist.bin_width / 1.1774).max(hist.bin_width / 2.0)
        };
        let (mu0, mu1) = (hist.center(i0), hist.center(i1));
        let (sigma0, sigma1) = (width(i0), width(i1));
        let mass = |mu: f64, sigma: f64| {
            hist.counts
                .iter()
                .enumerate()
                .filter(|(i, _)| (hist.center(*i) - mu).abs() <= 2.0 * sigma)
                .map(|(_, c)| *c as f64)
                .sum::<f64>()
                / (0.9545 * total)
        };
        let a = mass(mu0, sigma0).clamp(0.02, 0.96);
        let b = mass(mu1, sigma1).clamp(0.02, 0.98 - a);
        Ok(Self {
            a,
            b,
            c: (1.0 - a - b).max(0.0),
            mu0,
            mu1,
            sigma0,
            sigma1,
            sigma_lost: 0.5 * (sigma0 + sigma1),
        })
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, x)| if *x > best.1 { (i, *x) } else { best })
        .0
}

/// One-sigma uncertainties of [`ThreeComponentFit`]'s parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeComponentUncertainty {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub p: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub d: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma_lost: f64,
}

/// Fitted mixture `a·N(μ₀, σ₀) + b·N(μ₁, σ₁) + c·lost(p, μ₀, μ₁, σ_lost)`
/// with `a + b + c = 1` and the survival probability tied to `p = b/(b+c)`.
///
/// `a` is the unoccupied fraction, `b` the fraction of atoms that survive
/// the exposure and `c` the fraction lost during it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeComponentFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub p: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub d: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma_lost: f64,
    pub uncertainty: ThreeComponentUncertainty,
    /// Pearson χ² per degree of freedom at the optimum.
    pub reduced_chi2: f64,
    pub evaluations: usize,
}

impl ThreeComponentFit {
    pub fn pdf(&self, x: f64) -> f64 {
        Params {
            a: self.a,
            b: self.b,
            mu0: self.mu0,
            mu1: self.mu1,
            sigma0: self.sigma0,
            sigma1: self.sigma1,
            sigma_lost: self.sigma_lost,
        }
        .pdf(x)
    }
}

/// Density of the mixture for explicit parameters.
#[allow(clippy::too_many_arguments)]
pub fn mixture_pdf(
    x: f64,
    a: f64,
    b: f64,
    mu0: f64,
    mu1: f64,
    sigma0: f64,
    sigma1: f64,
    sigma_lost: f64,
) -> f64 {
    Params {
        a,
        b,
        mu0,
        mu1,
        sigma0,
        sigma1,
        sigma_lost,
    }
    .pdf(x)
}

#[derive(Clone, Copy, Debug)]
struct Params {
    a: f64,
    b: f64,
    mu0: f64,
    mu1: f64,
    sigma0: f64,
    sigma1: f64,
    sigma_lost: f64,
}

impl Params {
    fn c(&self) -> f64 {
        1.0 - self.a - self.b
    }

    /// Not clamped above 1: curvature is taken across `c = 0`, where a
    /// slightly negative `c` must continue the model smoothly.
    fn p(&self) -> f64 {
        let c = self.c();
        if self.b + c <= 0.0 {
            1.0
        } else {
            (self.b / (self.b + c)).max(1e-12)
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        let c = self.c();
        let lost = if c != 0.0 {
            c * pdf_lost(x, self.p(), self.mu0, self.mu1, self.sigma_lost)
        } else {
            0.0
        };
        self.a * pdf_gaussian(x, self.mu0, self.sigma0) + self.b * pdf_gaussian(x, self.mu1, self.sigma1) + lost
    }

    fn natural(&self) -> [f64; 7] {
        [self.a, self.b, self.mu0, self.mu1, self.sigma0, self.sigma1, self.sigma_lost]
    }

    fn from_natural(v: &[f64]) -> Self {
        Self {
            a: v[0],
            b: v[1],
            mu0: v[2],
            mu1: v[3],
            sigma0: v[4],
            sigma1: v[5],
            sigma_lost: v[6],
        }
    }

    /// Search coordinates. Weights are `qᵢ²/Σq²` with `q_a = 1`, which keeps
    /// a vanishing component at a regular point instead of at infinity.
    fn search(&self) -> [f64; 7] {
        let a = self.a.max(1e-9);
        [
            (self.b.max(0.0) / a).sqrt(),
            (self.c().max(0.0) / a).sqrt(),
            self.mu0,
            self.mu1,
            self.sigma0.ln(),
            self.sigma1.ln(),
            self.sigma_lost.ln(),
        ]
    }

    fn from_search(v: &[f64]) -> Self {
        let (qb, qc) = (v[0] * v[0], v[1] * v[1]);
        let sum = 1.0 + qb + qc;
        Self {
            a: 1.0 / sum,
            b: qb / sum,
            mu0: v[2],
            mu1: v[3],
            sigma0: v[4].exp(),
            sigma1: v[5].exp(),
            sigma_lost: v[6].exp(),
        }
    }
}

fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2))
}

/// Expected bin counts: exact for the Gaussian components, composite
/// Simpson with sub-intervals no wider than `σ_lost/2` for the lost one.
fn expected_counts(params: &Params, hist: &Histogram, out: &mut Vec<f64>) {
    let n = hist.counts.len();
    let total = hist.total() as f64;
    let w = hist.bin_width;
    let c = params.c();
    let p = params.p();
    let sub = ((2.0 * w / params.sigma_lost).ceil() as usize).clamp(1, 64) * 2;
    let h = w / sub as f64;
    let lost = |x: f64| pdf_lost(x, p, params.mu0, params.mu1, params.sigma_lost);
    out.clear();
    let mut cdf0 = normal_cdf(hist.origin, params.mu0, params.sigma0);
    let mut cdf1 = normal_cdf(hist.origin, params.mu1, params.sigma1);
    let mut left = if c != 0.0 { lost(hist.origin) } else { 0.0 };
    for i in 0..n {
        let lo = hist.origin + i as f64 * w;
        let hi = lo + w;
        let (next0, next1) = (normal_cdf(hi, params.mu0, params.sigma0), normal_cdf(hi, params.mu1, params.sigma1));
        let mut m = params.a * (next0 - cdf0) + params.b * (next1 - cdf1);
        (cdf0, cdf1) = (next0, next1);
        if c != 0.0 {
            let mut acc = left;
            for k in 1..sub {
                acc += lost(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            let right = lost(hi);
            acc += right;
            left = right;
            m += c * acc * h / 3.0;
        }
        out.push(total * m);
    }
}

fn pearson(params: &Params, hist: &Histogram, scratch: &mut Vec<f64>) -> f64 {
    if !(params.mu1 > params.mu0) || params.sigma0 <= 0.0 || params.sigma1 <= 0.0 || params.sigma_lost <= 0.0 {
        return f64::INFINITY;
    }
    expected_counts(params, hist, scratch);
    hist.counts
        .iter()
        .zip(scratch.iter())
        .map(|(h, m)| {
            let r = *h as f64 - m;
            r * r / m.max(1.0)
        })
        .sum()
}

/// Weighted least-squares fit of the three-component mixture to a histogram
/// of ROI sums. `init` defaults to [`ThreeComponentInit::from_histogram`].
///
/// The objective is Pearson's χ², minimized by a restarted simplex search.
/// Uncertainties come from the curvature of χ² at the optimum, inflated by
/// the reduced χ² when the model underfits.
pub fn fit_three_component(
    hist: &Histogram,
    init: Option<&ThreeComponentInit>,
) -> Result<ThreeComponentFit, FittingError> {
    let init = match init {
        Some(i) => i.clone(),
        None => ThreeComponentInit::from_histogram(hist)?,
    };
    if !(init.mu1 > init.mu0) {
        return Err(FittingError::Invalid {
            field: "mu1",
            constraint: "must exceed mu0",
        });
    }
    if !(init.sigma0 > 0.0 && init.sigma1 > 0.0 && init.sigma_lost > 0.0) {
        return Err(FittingError::Invalid {
            field: "sigma",
            constraint: "must be positive",
        });
    }
    let weights = init.a + init.b + init.c;
    if !(weights > 0.0) || init.a < 0.0 || init.b < 0.0 || init.c < 0.0 {
        return Err(FittingError::Invalid {
            field: "a, b, c",
            constraint: "must be non-negative with a positive sum",
        });
    }
    let start = Params {
        a: init.a / weights,
        b: init.b / weights,
        mu0: init.mu0,
        mu1: init.mu1,
        sigma0: init.sigma0,
        sigma1: init.sigma1,
        sigma_lost: init.sigma_lost,
    };

    let mut scratch = Vec::with_capacity(hist.counts.len());
    let x0 = start.search();
    let steps = [0.2 * x0[0].max(0.5), 0.2 * x0[1].max(0.5), 0.2 * start.sigma0, 0.2 * start.sigma1, 0.2, 0.2, 0.2];
    let run = minimize(
        |v| pearson(&Params::from_search(v), hist, &mut scratch),
        &x0,
        &steps,
        SimplexOptions::default(),
    );
    if !run.converged {
        return Err(FittingError::NonConvergence {
            evaluations: run.evaluations,
        });
    }
    let best = Params::from_search(&run.x);
    if best.mu1 - best.mu0 < 0.5 * (best.sigma0 + best.sigma1).min(best.sigma0.max(best.sigma1)) {
        return Err(FittingError::Degenerate("fitted peaks are not separated"));
    }

    let populated = hist.counts.iter().filter(|c| **c > 0).count();
    let dof = populated.saturating_sub(7).max(1) as f64;
    let reduced_chi2 = run.value / dof;

    let natural = best.natural();
    let h = [
        1e-4,
        1e-4,
        1e-3 * best.sigma0,
        1e-3 * best.sigma1,
        1e-3 * best.sigma0,
        1e-3 * best.sigma1,
        1e-3 * best.sigma_lost,
    ];
    let curvature = hessian(|v| pearson(&Params::from_natural(v), hist, &mut scratch), &natural, &h);
    let cov = covariance(curvature, hist.bin_width, 2.0 * reduced_chi2.max(1.0));
    let uncertainty = covariance_to_uncertainty(cov.as_ref(), &best);

    let (c, p) = (best.c().max(0.0), best.p().min(1.0));
    Ok(ThreeComponentFit {
        a: best.a,
        b: best.b,
        c,
        p: if best.b + c > 0.0 { best.b / (best.b + c) } else { p },
        mu0: best.mu0,
        mu1: best.mu1,
        d: best.mu1 - best.mu0,
        sigma0: best.sigma0,
        sigma1: best.sigma1,
        sigma_lost: best.sigma_lost,
        uncertainty,
        reduced_chi2,
        evaluations: run.evaluations,
    })
}

/// Propagates the covariance of `[a, b, μ₀, μ₁, σ₀, σ₁, σ_lost]` to every
/// reported quantity. Missing or negative variances become NaN.
/// Covariance from the curvature of χ² in natural parameters.
///
/// The curvature is inverted on its well-curved subspace after scaling
/// positions and widths by the bin width. Flat directions are real: the lost
/// width does nothing when the lost weight is zero, and a peak narrower than
/// a bin can slide and shrink inside it. A position caught in a flat
/// direction is known to within its bin, so it gets the variance `w²/12` of
/// a uniform offset; any other parameter caught there gets NaN.
fn covariance(curvature: DMatrix<f64>, bin_width: f64, factor: f64) -> Option<DMatrix<f64>> {
    let scale = [1.0, 1.0, bin_width, bin_width, bin_width, bin_width, bin_width];
    let scaled = DMatrix::from_fn(7, 7, |i, j| curvature[(i, j)] * scale[i] * scale[j]);
    let eig = scaled.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return None;
    }
    let mut inv = DMatrix::zeros(7, 7);
    let mut flat = [false; 7];
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        if lambda > 1e-3 * top {
            inv += (v * v.transpose()) / lambda;
        } else {
            for (f, x) in flat.iter_mut().zip(v.iter()) {
                *f |= x.abs() > 0.3;
            }
        }
    }
    let mut cov = DMatrix::from_fn(7, 7, |i, j| inv[(i, j)] * scale[i] * scale[j] * factor);
    for i in (0..7).filter(|&i| flat[i]) {
        cov.row_mut(i).fill(0.0);
        cov.column_mut(i).fill(0.0);
        cov[(i, i)] = if i == 2 || i == 3 { bin_width * bin_width / 12.0 } else { f64::NAN };
    }
    Some(cov)
}

fn covariance_to_uncertainty(cov: Option<&DMatrix<f64>>, best: &Params) -> ThreeComponentUncertainty {
    let Some(cov) = cov else {
        let nan = f64::NAN;
        return ThreeComponentUncertainty {
            a: nan,
            b: nan,
            c: nan,
            p: nan,
            mu0: nan,
            mu1: nan,
            d: nan,
            sigma0: nan,
            sigma1: nan,
            sigma_lost: nan,
        };
    };
    let sd = |g: &[f64]| {
        let mut var = 0.0;
        for i in 0..7 {
            for j in 0..7 {
                if g[i] != 0.0 && g[j] != 0.0 {
                    var += g[i] * cov[(i, j)] * g[j];
                }
            }
        }
        if var >= 0.0 {
            var.sqrt()
        } else {
            f64::NAN
        }
    };
    let unit = |k: usize| {
        let mut g = [0.0; 7];
        g[k] = 1.0;
        g
    };
    let one_minus_a = 1.0 - best.a;
    let dp = [best.b / (one_minus_a * one_minus_a), 1.0 / one_minus_a, 0.0, 0.0, 0.0, 0.0, 0.0];
    ThreeComponentUncertainty {
        a: sd(&unit(0)),
        b: sd(&unit(1)),
        c: sd(&[-1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        p: sd(&dp),
        mu0: sd(&unit(2)),
        mu1: sd(&unit(3)),
        d: sd(&[0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0]),
        sigma0: sd(&unit(4)),
        sigma1: sd(&unit(5)),
        sigma_lost: sd(&unit(6)),
    }
}
