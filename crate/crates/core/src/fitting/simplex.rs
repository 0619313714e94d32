//! Derivative-free minimization and curvature estimates.

use nalgebra::DMatrix;

/// Stopping rules for [`minimize`].
#[derive(Clone, Copy, Debug)]
pub struct SimplexOptions {
    /// Largest vertex distance from the best vertex, per coordinate and
    /// relative to the initial step in that coordinate.
    pub tolerance: f64,
    /// Cap on objective evaluations across all restarts.
    pub max_evaluations: usize,
    /// Fresh simplices built around the incumbent after convergence.
    pub max_restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_evaluations: 100_000,
            max_restarts: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub restarts: usize,
    /// False when the evaluation cap was hit first.
    pub converged: bool,
}

/// Nelder–Mead with dimension-adapted coefficients. After each convergence
/// the search restarts from the incumbent with the initial steps, and stops
/// once a restart no longer improves the value.
///
/// Non-finite objective values are treated as `+∞`.
pub fn minimize<F>(mut f: F, x0: &[f64], steps: &[f64], options: SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x0.len(), steps.len());
    assert!(steps.iter().all(|s| *s != 0.0), "simplex steps must be non-zero");
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut evaluations = 0;
    let mut best = x0.to_vec();
    let mut best_value = eval(&best);
    evaluations += 1;
    let mut restarts = 0;
    loop {
        let run = nelder_mead(&mut eval, &best, steps, options, options.max_evaluations.saturating_sub(evaluations));
        evaluations += run.evaluations;
        let improved = run.value < best_value - 1e-12 * best_value.abs().max(1e-300);
        if run.value <= best_value {
            best = run.x;
            best_value = run.value;
        }
        if !run.converged {
            return SimplexResult {
                x: best,
                value: best_value,
                evaluations,
                restarts,
                converged: false,
            };
        }
        if !improved || restarts >= options.max_restarts {
            return SimplexResult {
                x: best,
                value: best_value,
                evaluations,
                restarts,
                converged: true,
            };
        }
        restarts += 1;
    }
}

struct Run {
    x: Vec<f64>,
    value: f64,
    evaluations: usize,
    converged: bool,
}

fn nelder_mead<F>(f: &mut F, x0: &[f64], steps: &[f64], options: SimplexOptions, budget: usize) -> Run
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    let mut evaluations = 0;
    for v in &simplex {
        values.push(f(v));
        evaluations += 1;
    }

    let point = |centroid: &[f64], worst: &[f64], t: f64| -> Vec<f64> {
        centroid.iter().zip(worst).map(|(c, w)| c + t * (c - w)).collect()
    };

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).zip(steps).map(|((a, b), s)| ((a - b) / s).abs()))
            .fold(0.0, f64::max);
        if size < options.tolerance {
            return Run {
                x: simplex.swap_remove(0),
                value: values[0],
                evaluations,
                converged: true,
            };
        }
        if evaluations + n + 2 > budget {
            return Run {
                x: simplex.swap_remove(0),
                value: values[0],
                evaluations,
                converged: false,
            };
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let worst = simplex[n].clone();
        let reflected = point(&centroid, &worst, alpha);
        let fr = f(&reflected);
        evaluations += 1;

        if fr < values[0] {
            let expanded = point(&centroid, &worst, alpha * gamma);
            let fe = f(&expanded);
            evaluations += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (candidate, fc) = if fr < values[n] {
            let c = point(&centroid, &worst, alpha * rho);
            let v = f(&c);
            (c, v)
        } else {
            let c = point(&centroid, &worst, -rho);
            let v = f(&c);
            (c, v)
        };
        evaluations += 1;
        if fc < values[n].min(fr) {
            simplex[n] = candidate;
            values[n] = fc;
            continue;
        }
        // Shrink towards the best vertex.
        let best = simplex[0].clone();
        for i in 1..=n {
            for (x, b) in simplex[i].iter_mut().zip(&best) {
                *x = b + sigma * (*x - b);
            }
            values[i] = f(&simplex[i]);
            evaluations += 1;
        }
    }
}

/// Central-difference Hessian of `f` at `x` with per-coordinate steps `h`.
pub fn hessian<F>(mut f: F, x: &[f64], h: &[f64]) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    let f0 = f(x);
    let mut out = DMatrix::zeros(n, n);
    let mut p = x.to_vec();
    for i in 0..n {
        p[i] = x[i] + h[i];
        let fp = f(&p);
        p[i] = x[i] - h[i];
        let fm = f(&p);
        p[i] = x[i];
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                p[i] = x[i] + si * h[i];
                p[j] = x[j] + sj * h[j];
                let v = f(&p);
                p[i] = x[i];
                p[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Inverse of a symmetric positive-definite matrix, or `None` when the
/// matrix is singular or indefinite.
pub fn spd_inverse(m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.cholesky().map(|c| c.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(f, &[-1.2, 1.0], &[0.1, 0.1], SimplexOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn badly_scaled_quadratic_in_ten_dimensions() {
        let scales: Vec<f64> = (0..10).map(|i| 10f64.powi(i % 4)).collect();
        let target: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .zip(&scales)
                .map(|((a, t), s)| ((a - t) / s).powi(2))
                .sum::<f64>()
        };
        let r = minimize(f, &[0.0; 10], &scales, SimplexOptions::default());
        for ((x, t), s) in r.x.iter().zip(&target).zip(&scales) {
            assert!((x - t).abs() < 1e-5 * s, "{x} vs {t}");
        }
    }

    #[test]
    fn evaluation_cap_is_reported() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let options = SimplexOptions {
            max_evaluations: 30,
            ..SimplexOptions::default()
        };
        let r = minimize(f, &[-1.2, 1.0], &[0.1, 0.1], options);
        assert!(!r.converged);
        assert!(r.evaluations <= 30);
    }

    #[test]
    fn hessian_of_quadratic() {
        // f = x² + 3xy + 5y²: H = [[2, 3], [3, 10]].
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1] + 5.0 * x[1] * x[1];
        let h = hessian(f, &[0.3, -0.7], &[1e-3, 1e-3]);
        assert!((h[(0, 0)] - 2.0).abs() < 1e-6);
        assert!((h[(0, 1)] - 3.0).abs() < 1e-6);
        assert!((h[(1, 1)] - 10.0).abs() < 1e-6);
        let inv = spd_inverse(h).unwrap();
        assert!((inv[(0, 0)] - 10.0 / 11.0).abs() < 1e-6);
        assert!(spd_inverse(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_none());
    }
}
