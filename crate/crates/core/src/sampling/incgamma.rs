//! Regularized upper incomplete gamma function for integer order and its
//! inverse by third-order Schröder iteration.
//!
//! For a positive integer order `x` the root of `f(t) = r − Q(x, t)` is found
//! with
//!
//! ```text
//! t ← t − (f/f′)·(1 + (f/f′)·(f″/f′)/2)
//! f″/f′ = (x − 1)/t − 1
//! f/f′  = t^{1−x}·(x−1)!·r·eᵗ − Σ_{k=0}^{x−1} (x−1)! / (t^{x−k−1}·k!)
//! ```
//!
//! Both terms of `f/f′` are accumulated as running products so no factorial
//! or power is ever formed on its own.

use super::SamplingError;

/// Iteration cap for the Schröder solver.
pub const MAX_SCHRODER_ITERATIONS: u32 = 64;

/// Squared-step threshold used when no EM gain scale is involved.
pub const DEFAULT_STEP_THRESHOLD: f64 = 1e-14;

/// `Q(x, t) = Γ(x, t)/Γ(x)` for integer `x ≥ 1` and `t ≥ 0`.
///
/// Evaluated as `e^{−t}·Σ_{k<x} t^k/k!` with each term formed in log space,
/// which stays finite for large `t`.
pub fn regularized_gamma_upper(x: u64, t: f64) -> f64 {
    assert!(x >= 1, "order must be positive");
    if t <= 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let ln_t = t.ln();
    let mut ln_fact = 0.0;
    let mut sum = 0.0;
    for k in 0..x {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        sum += (-t + k as f64 * ln_t - ln_fact).exp();
    }
    sum.min(1.0)
}

/// Result of one inversion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaInverse {
    pub t: f64,
    pub iterations: u32,
}

/// Solves `Q(x, t) = r` for `t`.
pub fn inverse_regularized_gamma_upper(x: u64, r: f64) -> Result<f64, SamplingError> {
    inverse_regularized_gamma_upper_with(x, r, DEFAULT_STEP_THRESHOLD).map(|s| s.t)
}

/// Solves `Q(x, t) = r`, stopping once the squared step falls below
/// `step_threshold`. The iteration starts at `t₀ = x`, the mean of the
/// underlying Gamma(x, 1) variable.
pub fn inverse_regularized_gamma_upper_with(
    x: u64,
    r: f64,
    step_threshold: f64,
) -> Result<GammaInverse, SamplingError> {
    if x == 0 {
        return Err(SamplingError::Parameter {
            name: "x",
            reason: "order must be a positive integer",
        });
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(SamplingError::Parameter {
            name: "r",
            reason: "must lie strictly between 0 and 1",
        });
    }

    let order = x as f64;
    let mut t = order;
    for iteration in 1..=MAX_SCHRODER_ITERATIONS {
        let ratio = f_over_fprime(x, r, t);
        let curvature = (order - 1.0) / t - 1.0;
        let mut next = t - ratio * (1.0 + 0.5 * ratio * curvature);
        if !next.is_finite() {
            return Err(SamplingError::NonConvergence {
                iterations: iteration,
            });
        }
        // Q(x, ·) is only defined on t > 0; fall back towards zero geometrically.
        if next <= 0.0 {
            next = 0.5 * t;
        }
        let step = next - t;
        t = next;
        if step * step < step_threshold {
            return Ok(GammaInverse {
                t,
                iterations: iteration,
            });
        }
    }
    Err(SamplingError::NonConvergence {
        iterations: MAX_SCHRODER_ITERATIONS,
    })
}

/// `f(t)/f′(t)` for `f(t) = r − Q(x, t)`.
fn f_over_fprime(x: u64, r: f64, t: f64) -> f64 {
    // Minuend r·(x−1)!·t^{1−x}·eᵗ: the exponential is spread over the x
    // factors of the running product so that it never overflows by itself.
    let order = x as f64;
    let exp_share = (t / order).exp();
    let mut minuend = r * exp_share;
    for i in 1..x {
        minuend *= (i as f64 / t) * exp_share;
    }

    // Subtrahend Σ_{j=0}^{x−1} Π_{i=1}^{j} (x−i)/t.
    let mut term = 1.0;
    let mut subtrahend = 1.0;
    for j in 1..x {
        term *= (order - j as f64) / t;
        subtrahend += term;
    }
    minuend - subtrahend
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed form Q(x,t) by direct summation with plain factorials; only
    /// valid for small x, which is all the oracle needs.
    fn q_direct(x: u64, t: f64) -> f64 {
        let mut fact = 1.0;
        let mut sum = 0.0;
        for k in 0..x {
            if k > 0 {
                fact *= k as f64;
            }
            sum += t.powi(k as i32) / fact;
        }
        (-t).exp() * sum
    }

    fn bisect(x: u64, r: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 200.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q_direct(x, mid) > r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn forward_matches_direct_sum() {
        for x in 1..=20 {
            for &t in &[0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 25.0] {
                let a = regularized_gamma_upper(x, t);
                let b = q_direct(x, t);
                assert!((a - b).abs() < 1e-13, "x={x} t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_large_arguments_stay_finite() {
        let q = regularized_gamma_upper(1000, 1000.0);
        assert!(q > 0.45 && q < 0.5, "{q}");
        assert_eq!(regularized_gamma_upper(3, 0.0), 1.0);
    }

    #[test]
    fn order_one_closed_form() {
        let t = inverse_regularized_gamma_upper(1, (-2.0_f64).exp()).unwrap();
        assert!((t - 2.0).abs() < 1e-9, "{t}");
    }

    #[test]
    fn order_three_median() {
        // Oracle: bisection on e^{-t}(1 + t + t²/2) = 0.5 gives 2.67406.
        let oracle = bisect(3, 0.5);
        assert!((oracle - 2.674).abs() < 5e-4, "{oracle}");
        let t = inverse_regularized_gamma_upper(3, 0.5).unwrap();
        assert!((t - oracle).abs() < 1e-8, "{t} vs {oracle}");
    }

    #[test]
    fn forward_check_grid() {
        for x in 1..=20 {
            for i in 1..=99 {
                let r = i as f64 / 100.0;
                let t = inverse_regularized_gamma_upper(x, r).unwrap();
                let back = regularized_gamma_upper(x, t);
                assert!((back - r).abs() < 1e-3, "x={x} r={r}: Q={back}");
                assert!((t - bisect(x, r)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn coarse_threshold_residual_bound() {
        for &g in &[10.0, 300.0] {
            let threshold = 1.0 / (100.0 * g * g);
            for x in [2u64, 5, 10, 50] {
                for i in 1..50 {
                    let r = i as f64 / 50.0;
                    let sol = inverse_regularized_gamma_upper_with(x, r, threshold).unwrap();
                    let resid = (regularized_gamma_upper(x, sol.t) - r).abs();
                    assert!(resid <= 10.0 * threshold.sqrt(), "x={x} r={r} resid={resid}");
                    assert!(sol.iterations <= MAX_SCHRODER_ITERATIONS);
                }
            }
        }
    }

    #[test]
    fn extreme_probabilities_converge() {
        // As r → 1 the two terms of f/f′ cancel to within r's distance from
        // one, so 1 − 1e-6 is about as close as double precision resolves.
        for x in [1u64, 2, 10, 100, 1000] {
            for &r in &[1e-15, 1e-9, 1e-3, 0.999, 1.0 - 1e-6] {
                let sol = inverse_regularized_gamma_upper_with(x, r, DEFAULT_STEP_THRESHOLD)
                    .unwrap_or_else(|e| panic!("x={x} r={r}: {e}"));
                let back = regularized_gamma_upper(x, sol.t);
                assert!((back - r).abs() < 1e-6 * r.max(1e-3), "x={x} r={r} Q={back}");
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(inverse_regularized_gamma_upper(0, 0.5).is_err());
        assert!(inverse_regularized_gamma_upper(2, 0.0).is_err());
        assert!(inverse_regularized_gamma_upper(2, 1.0).is_err());
        assert!(inverse_regularized_gamma_upper(2, f64::NAN).is_err());
    }
}
