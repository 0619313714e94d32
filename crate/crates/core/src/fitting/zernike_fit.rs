//! Aberration coefficients from an averaged single-atom spot.
//!
//! The model is the simulator's own single-atom response, rendered for
//! candidate coefficients on the same frame geometry and cropped to the spot
//! window, then scaled and offset by a linear least-squares amplitude and
//! background. Tilt is fitted as a sub-pixel alignment parameter.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::simplex::{minimize, SimplexOptions};
use super::FittingError;
use crate::field::ScalarField2D;
use crate::optics::{OpticalConfig, OpticalSystem, PupilBasis, ZernikeCoefficients, ZernikeTerm};

/// Where the spot window sits in the camera frame, and where to start.
#[derive(Clone, Debug)]
pub struct ZernikeFitOptions {
    pub frame_width: usize,
    pub frame_height: usize,
    /// Camera pixel `(row, col)` of the atom.
    pub site: (usize, usize),
    /// Frame pixel `(row, col)` of the spot window's top-left corner.
    pub window_origin: (usize, usize),
    /// Starting coefficients. Even aberrations have a global sign ambiguity
    /// (the response to `W` and `−W` is the same), so the start selects the
    /// branch; the default starts at a small positive defocus.
    pub init: ZernikeCoefficients,
    pub simplex: SimplexOptions,
}

impl ZernikeFitOptions {
    /// The spot covers a whole `width × height` frame with the atom at
    /// `(height/2, width/2)`.
    pub fn whole_frame(width: usize, height: usize) -> Self {
        Self {
            frame_width: width,
            frame_height: height,
            site: (height / 2, width / 2),
            window_origin: (0, 0),
            init: default_init(),
            simplex: SimplexOptions::default(),
        }
    }

    /// A square window of half-size `half` around `site` in a larger frame.
    pub fn window(width: usize, height: usize, site: (usize, usize), half: usize) -> Self {
        Self {
            frame_width: width,
            frame_height: height,
            site,
            window_origin: (site.0.saturating_sub(half), site.1.saturating_sub(half)),
            init: default_init(),
            simplex: SimplexOptions::default(),
        }
    }
}

fn default_init() -> ZernikeCoefficients {
    ZernikeCoefficients::default().with(ZernikeTerm::Defocus, 0.05)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub term: ZernikeTerm,
    pub value: f64,
    pub uncertainty: f64,
    /// Tilt only positions the spot; its value carries no aberration.
    pub alignment_only: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZernikeFit {
    /// One entry per term, tilts first.
    pub terms: Vec<TermEstimate>,
    /// Fitted spot total (photons or counts, as in the input).
    pub amplitude: f64,
    pub background: f64,
    /// Root-mean-square residual per pixel.
    pub residual_rms: f64,
    pub evaluations: usize,
}

impl ZernikeFit {
    pub fn get(&self, term: ZernikeTerm) -> &TermEstimate {
        self.terms.iter().find(|t| t.term == term).expect("every term is reported")
    }

    /// Fitted aberrations with tilt removed.
    pub fn coefficients(&self) -> ZernikeCoefficients {
        let mut c = ZernikeCoefficients::default();
        for t in self.terms.iter().filter(|t| !t.alignment_only) {
            c.set(t.term, t.value);
        }
        c
    }
}

struct SpotModel<'a> {
    config: &'a OpticalConfig,
    basis: PupilBasis,
    options: &'a ZernikeFitOptions,
    width: usize,
    height: usize,
    observed: &'a [f64],
}

impl SpotModel<'_> {
    fn render(&self, coefficients: &ZernikeCoefficients) -> Vec<f64> {
        let o = self.options;
        let system = OpticalSystem::with_basis(self.config, o.frame_width, o.frame_height, &self.basis, coefficients)
            .expect("geometry validated before fitting");
        system
            .spot(o.site.0, o.site.1)
            .crop(o.window_origin.0, o.window_origin.1, self.width, self.height)
            .into_vec()
    }

    /// Best amplitude and background for a rendered shape, and the residual
    /// sum of squares.
    fn solve(&self, shape: &[f64]) -> (f64, f64, f64) {
        let n = shape.len() as f64;
        let (sm, so) = (shape.iter().sum::<f64>(), self.observed.iter().sum::<f64>());
        let smm: f64 = shape.iter().map(|m| m * m).sum();
        let smo: f64 = shape.iter().zip(self.observed).map(|(m, o)| m * o).sum();
        let det = n * smm - sm * sm;
        let (amp, bg) = if det.abs() > 0.0 {
            ((n * smo - sm * so) / det, (smm * so - sm * smo) / det)
        } else {
            (0.0, so / n)
        };
        let rss = shape
            .iter()
            .zip(self.observed)
            .map(|(m, o)| (o - amp * m - bg).powi(2))
            .sum();
        (amp, bg, rss)
    }

    fn rss(&self, coefficients: &ZernikeCoefficients) -> f64 {
        self.solve(&self.render(coefficients)).2
    }
}

fn to_coefficients(x: &[f64]) -> ZernikeCoefficients {
    let mut c = ZernikeCoefficients::default();
    for (t, v) in ZernikeTerm::ALL.iter().zip(x) {
        c.set(*t, *v);
    }
    c
}

/// Fits every Zernike term, tilt included, to a background-subtracted mean
/// spot by least squares.
///
/// Uncertainties come from the Gauss–Newton covariance `s²(JᵀJ)⁻¹` with the
/// residual variance `s²`. Near a vanishing aberration the response is
/// quadratic in the coefficient and that curvature collapses, so each value
/// is also bounded below by the distance along its own axis at which the
/// residual sum grows by `s²`.
pub fn fit_zernike(
    mean_spot: &ScalarField2D,
    config: &OpticalConfig,
    options: &ZernikeFitOptions,
) -> Result<ZernikeFit, FittingError> {
    config.validate().map_err(|_| FittingError::Invalid {
        field: "optics",
        constraint: "optical configuration must be valid",
    })?;
    let (width, height) = (mean_spot.width(), mean_spot.height());
    let ring = config.first_dark_ring_radius();
    let needed = 2 * (2.0 * ring).ceil() as usize + 1;
    if width < needed || height < needed {
        return Err(FittingError::SpotTooSmall { width, height, needed });
    }
    let o = options;
    if o.window_origin.0 + height > o.frame_height || o.window_origin.1 + width > o.frame_width {
        return Err(FittingError::Invalid {
            field: "window_origin",
            constraint: "spot window must lie inside the frame",
        });
    }
    if o.site.0 >= o.frame_height || o.site.1 >= o.frame_width {
        return Err(FittingError::Invalid {
            field: "site",
            constraint: "must lie inside the frame",
        });
    }
    if mean_spot.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(FittingError::Invalid {
            field: "mean_spot",
            constraint: "must be finite",
        });
    }

    let model = SpotModel {
        config,
        basis: OpticalSystem::pupil_basis(config, o.frame_width, o.frame_height),
        options,
        width,
        height,
        observed: mean_spot.as_slice(),
    };
    let x0: Vec<f64> = ZernikeTerm::ALL.iter().map(|t| o.init.get(*t)).collect();
    let steps = vec![0.01; x0.len()];
    let run = minimize(|x| model.rss(&to_coefficients(x)), &x0, &steps, o.simplex);
    if !run.converged {
        return Err(FittingError::NonConvergence {
            evaluations: run.evaluations,
        });
    }
    let best = to_coefficients(&run.x);
    let shape = model.render(&best);
    let (amplitude, background, rss) = model.solve(&shape);
    let n = shape.len();
    let k = x0.len() + 2;
    let s2 = rss / n.saturating_sub(k).max(1) as f64;

    // Jacobian over the coefficients, the amplitude and the background.
    let h = 1e-4;
    let mut jac = DMatrix::<f64>::zeros(n, k);
    for (j, term) in ZernikeTerm::ALL.iter().enumerate() {
        let v = best.get(*term);
        let plus = model.render(&best.with(*term, v + h));
        let minus = model.render(&best.with(*term, v - h));
        for i in 0..n {
            jac[(i, j)] = amplitude * (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    for i in 0..n {
        jac[(i, k - 2)] = shape[i];
        jac[(i, k - 1)] = 1.0;
    }
    let jtj = jac.transpose() * &jac;
    let gauss_newton = jtj.cholesky().map(|c| c.inverse() * s2);

    let terms = ZernikeTerm::ALL
        .iter()
        .enumerate()
        .map(|(j, term)| {
            let curvature = gauss_newton
                .as_ref()
                .map(|cov| cov[(j, j)].max(0.0).sqrt())
                .unwrap_or(f64::INFINITY);
            let axis = axis_half_width(&model, &best, *term, rss, s2);
            let alignment_only = matches!(term, ZernikeTerm::TiltX | ZernikeTerm::TiltY);
            TermEstimate {
                term: *term,
                value: best.get(*term),
                uncertainty: curvature.max(axis),
                alignment_only,
            }
        })
        .collect();
    Ok(ZernikeFit {
        terms,
        amplitude,
        background,
        residual_rms: (rss / n as f64).sqrt(),
        evaluations: run.evaluations,
    })
}

/// Mean distance on either side of the optimum along `term` at which the
/// residual sum of squares exceeds its minimum by `s2`.
fn axis_half_width(model: &SpotModel<'_>, best: &ZernikeCoefficients, term: ZernikeTerm, rss: f64, s2: f64) -> f64 {
    if s2 <= 0.0 {
        return 0.0;
    }
    let v = best.get(term);
    let rise = |delta: f64| model.rss(&best.with(term, v + delta)) - rss - s2;
    let side = |sign: f64| {
        let mut hi = 1e-5;
        while rise(sign * hi) < 0.0 {
            hi *= 2.0;
            if hi > 1.0 {
                return hi;
            }
        }
        let mut lo = 0.0;
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if rise(sign * mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    0.5 * (side(1.0) + side(-1.0))
}
