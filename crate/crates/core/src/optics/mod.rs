//! Fourier-optics image formation.
//!
//! The pupil is a disk in frequency space carrying the aberration phase.
//! Its transform gives the point-spread function, whose transform in turn
//! gives the optical transfer function. The atom array is blurred by
//! multiplying its spectrum with the modulus of that transfer function, and
//! the result is scaled to expected photons per pixel.
//!
//! Aberration amplitudes are RMS-normalized Zernike coefficients. A
//! coefficient `c` contributes a pupil phase of `4π·c·Z(ρ, θ)` radians, i.e.
//! `c` is measured in units of λ/2 of wavefront.

mod zernike;

pub use zernike::{zernike_eval, ZernikeCoefficients, ZernikeTerm};

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::AtomGrid;
use crate::field::{ComplexField2D, Fft2, ScalarField2D};

/// Pupil phase in radians per unit coefficient per unit polynomial value.
pub const PHASE_PER_UNIT: f64 = 4.0 * PI;

/// First zero of the Airy pattern in units of `λ/(2·NA)`.
pub const AIRY_FIRST_ZERO: f64 = 1.22;

/// First three dark rings of the Airy pattern in units of `λ/(2·NA)`:
/// zeros of `J₁` divided by π.
pub const AIRY_DARK_RINGS: [f64; 3] = [AIRY_FIRST_ZERO, 2.233, 3.238];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("unknown Zernike term `{0}`")]
    UnknownTerm(String),
    #[error("grid mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid optics parameter `{field}`: {constraint}")]
    Invalid {
        field: &'static str,
        constraint: &'static str,
    },
}

/// Imaging optics between the atoms and the camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalConfig {
    #[serde(default)]
    pub zernike: ZernikeCoefficients,
    /// Pupil radius as a fraction of the half-grid at camera resolution.
    #[serde(default = "default_pupil_fraction")]
    pub pupil_radius_fraction: f64,
    /// Sub-pixels per camera pixel along each axis.
    #[serde(default = "default_supersampling")]
    pub supersampling: usize,
    #[serde(default = "default_na")]
    pub numerical_aperture: f64,
    /// Metres.
    #[serde(default = "default_wavelength")]
    pub wavelength: f64,
    #[serde(default = "default_magnification")]
    pub magnification: f64,
    /// Metres, before any camera binning.
    #[serde(default = "default_pixel_size")]
    pub physical_pixel_size: f64,
}

fn default_pupil_fraction() -> f64 {
    0.5
}
fn default_supersampling() -> usize {
    1
}
fn default_na() -> f64 {
    0.65
}
fn default_wavelength() -> f64 {
    461e-9
}
fn default_magnification() -> f64 {
    156.25
}
fn default_pixel_size() -> f64 {
    16e-6
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self {
            zernike: ZernikeCoefficients::default(),
            pupil_radius_fraction: default_pupil_fraction(),
            supersampling: default_supersampling(),
            numerical_aperture: default_na(),
            wavelength: default_wavelength(),
            magnification: default_magnification(),
            physical_pixel_size: default_pixel_size(),
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<(), OpticsError> {
        let invalid = |field, constraint| Err(OpticsError::Invalid { field, constraint });
        if !(self.pupil_radius_fraction > 0.0 && self.pupil_radius_fraction <= 1.0) {
            return invalid("pupil_radius_fraction", "must lie in (0, 1]");
        }
        if !(1..=16).contains(&self.supersampling) {
            return invalid("supersampling", "must be an integer between 1 and 16");
        }
        if !(self.numerical_aperture > 0.0 && self.numerical_aperture < 1.0) {
            return invalid("numerical_aperture", "must lie in (0, 1)");
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return invalid("wavelength", "must be positive");
        }
        if !(self.magnification > 0.0 && self.magnification.is_finite()) {
            return invalid("magnification", "must be positive");
        }
        if !(self.physical_pixel_size > 0.0 && self.physical_pixel_size.is_finite()) {
            return invalid("physical_pixel_size", "must be positive");
        }
        if self.zernike.iter().any(|(_, c)| !c.is_finite()) {
            return invalid("zernike", "coefficients must be finite");
        }
        Ok(())
    }

    /// Pupil radius as a fraction of the half-grid of the supersampled grid.
    pub fn effective_pupil_fraction(&self) -> f64 {
        self.pupil_radius_fraction / self.supersampling as f64
    }

    /// Radius of the first dark Airy ring in camera pixels.
    pub fn first_dark_ring_radius(&self) -> f64 {
        AIRY_FIRST_ZERO / self.pupil_radius_fraction
    }

    /// Image shift in camera pixels `(dx, dy)` produced by the tilt terms.
    ///
    /// A tilt phase `4π·c·2ρcosθ` is a linear ramp whose slope moves the
    /// image by `8c/f` pixels for pupil fraction `f`.
    pub fn tilt_shift(&self) -> (f64, f64) {
        tilt_shift(&self.zernike, self.pupil_radius_fraction)
    }
}

fn tilt_shift(coefficients: &ZernikeCoefficients, fraction: f64) -> (f64, f64) {
    (8.0 * coefficients.tilt_x / fraction, 8.0 * coefficients.tilt_y / fraction)
}

/// Smallest power of two that is at least `n`.
pub fn padded_len(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Zernike polynomials sampled once on the pupil disk of a grid, so pupils
/// for many coefficient sets can be built without re-evaluating them.
#[derive(Clone, Debug)]
pub struct PupilBasis {
    width: usize,
    height: usize,
    points: Vec<(usize, [f64; 14])>,
}

impl PupilBasis {
    /// Disk of radius `fraction` of the half-grid centred at `(height/2, width/2)`.
    pub fn new(fraction: f64, width: usize, height: usize) -> Self {
        let (rx, ry) = (fraction * width as f64 / 2.0, fraction * height as f64 / 2.0);
        let (cx, cy) = ((width / 2) as f64, (height / 2) as f64);
        let mut points = Vec::new();
        for row in 0..height {
            let y = (row as f64 - cy) / ry;
            for col in 0..width {
                let x = (col as f64 - cx) / rx;
                let rho2 = x * x + y * y;
                if rho2 > 1.0 {
                    continue;
                }
                let (rho, theta) = (rho2.sqrt(), y.atan2(x));
                let mut values = [0.0; 14];
                for (v, term) in values.iter_mut().zip(ZernikeTerm::ALL) {
                    *v = zernike_eval(term, rho, theta);
                }
                points.push((row * width + col, values));
            }
        }
        Self { width, height, points }
    }

    /// Number of grid points inside the disk.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Unit-modulus pupil carrying the aberration phase of `coefficients`.
    pub fn pupil(&self, coefficients: &ZernikeCoefficients) -> ComplexField2D {
        let c: Vec<f64> = ZernikeTerm::ALL.iter().map(|t| coefficients.get(*t)).collect();
        let mut pupil = ComplexField2D::zeros(self.width, self.height);
        let out = pupil.as_mut_slice();
        for (index, values) in &self.points {
            let w: f64 = c.iter().zip(values).map(|(a, z)| a * z).sum();
            out[*index] = Complex64::from_polar(1.0, PHASE_PER_UNIT * w);
        }
        pupil
    }
}

/// Complex pupil on a `width × height` grid with zero frequency at
/// `(height/2, width/2)`: unit modulus with aberration phase inside the
/// disk, zero outside. `fraction` is the radius relative to the half-grid.
pub fn pupil_field(
    coefficients: &ZernikeCoefficients,
    fraction: f64,
    width: usize,
    height: usize,
) -> ComplexField2D {
    PupilBasis::new(fraction, width, height).pupil(coefficients)
}

/// Pupil for `config` on a supersampled grid of the given size.
pub fn build_pupil(config: &OpticalConfig, width: usize, height: usize) -> ComplexField2D {
    pupil_field(&config.zernike, config.effective_pupil_fraction(), width, height)
}

/// `|FFT(pupil)|²`, normalized to unit sum, centred at `(height/2, width/2)`.
pub fn pupil_to_psf(pupil: &ComplexField2D) -> ScalarField2D {
    let (w, h) = (pupil.width(), pupil.height());
    let mut field = pupil.clone();
    Fft2::new(w, h).forward(&mut field);
    // The pupil is stored centred; that only multiplies the transform by a
    // sign pattern, which the modulus removes.
    let mut psf = field.norm_sqr().fftshift();
    let total = psf.sum();
    if total > 0.0 {
        psf.scale(1.0 / total);
    }
    psf
}

/// `|FFT(psf)|` normalized to one at zero frequency, stored at index (0, 0).
pub fn psf_to_mtf(psf: &ScalarField2D) -> ScalarField2D {
    let mut field = ComplexField2D::from_real(psf);
    Fft2::new(psf.width(), psf.height()).forward(&mut field);
    let mut mtf = field.abs();
    let dc = mtf.get(0, 0);
    if dc > 0.0 {
        mtf.scale(1.0 / dc);
    }
    mtf
}

/// Point response implied by an MTF alone, centred and normalized to unit
/// sum. Equal to the PSF whenever the transfer function is real and
/// non-negative, as for an unaberrated system.
pub fn psf_from_mtf(mtf: &ScalarField2D) -> ScalarField2D {
    let mut field = ComplexField2D::from_real(mtf);
    Fft2::new(mtf.width(), mtf.height()).inverse(&mut field);
    let mut psf = field.abs().fftshift();
    let total = psf.sum();
    if total > 0.0 {
        psf.scale(1.0 / total);
    }
    psf
}

/// Transfer function applied to the atom array: the MTF of the tilt-free
/// PSF times a phase ramp that shifts the image by the tilt displacement.
///
/// For even supersampling the ramp also moves every atom back by half a
/// sub-pixel, so that an atom drawn at its camera pixel lands on that
/// pixel's centre.
pub fn transfer_function(config: &OpticalConfig, width: usize, height: usize) -> ComplexField2D {
    let basis = PupilBasis::new(config.effective_pupil_fraction(), width, height);
    transfer_from_basis(&basis, config, &config.zernike)
}

/// [`transfer_function`] on the grid of a prebuilt basis, with the
/// aberrations taken from `coefficients` instead of `config.zernike`.
pub fn transfer_from_basis(
    basis: &PupilBasis,
    config: &OpticalConfig,
    coefficients: &ZernikeCoefficients,
) -> ComplexField2D {
    let psf = pupil_to_psf(&basis.pupil(&coefficients.without_tilt()));
    let mtf = psf_to_mtf(&psf);
    let s = config.supersampling as f64;
    let (tx, ty) = tilt_shift(coefficients, config.pupil_radius_fraction);
    let centring = if config.supersampling.is_multiple_of(2) { -0.5 } else { 0.0 };
    let (dx, dy) = (tx * s + centring, ty * s + centring);
    ramp(&mtf, dx, dy)
}

/// Multiplies a zero-frequency-at-origin spectrum by `exp(−2πi(kx·dx/w + ky·dy/h))`.
fn ramp(mtf: &ScalarField2D, dx: f64, dy: f64) -> ComplexField2D {
    let (w, h) = (mtf.width(), mtf.height());
    let signed = |k: usize, n: usize| if k >= n.div_ceil(2) { k as f64 - n as f64 } else { k as f64 };
    let mut out = ComplexField2D::zeros(w, h);
    for row in 0..h {
        let py = signed(row, h) * dy / h as f64;
        for col in 0..w {
            let phase = -2.0 * PI * (signed(col, w) * dx / w as f64 + py);
            out.set(row, col, Complex64::from_polar(mtf.get(row, col), phase));
        }
    }
    out
}

/// Blurs `grid` by `transfer`, takes the modulus and returns it.
fn convolve_abs(grid: &ScalarField2D, transfer: &ComplexField2D, fft: &Fft2) -> ScalarField2D {
    let mut field = ComplexField2D::from_real(grid);
    fft.forward(&mut field);
    for (v, t) in field.as_mut_slice().iter_mut().zip(transfer.as_slice()) {
        *v *= t;
    }
    fft.inverse(&mut field);
    field.abs()
}

fn rescale_and_bin(mut map: ScalarField2D, total: f64, supersampling: usize) -> ScalarField2D {
    let sum = map.sum();
    if sum > 0.0 {
        map.scale(total / sum);
    } else {
        map.scale(0.0);
    }
    map.bin(supersampling)
}

/// Expected photons per camera pixel for an atom array on a grid of the same
/// size as `mtf`. The array is convolved circularly, scaled so its total is
/// `photons_per_atom × Σ atoms` and binned by `supersampling`.
pub fn apply_optics(
    atoms: &ScalarField2D,
    mtf: &ScalarField2D,
    photons_per_atom: f64,
    supersampling: usize,
) -> Result<ScalarField2D, OpticsError> {
    let dims = (mtf.width(), mtf.height());
    if (atoms.width(), atoms.height()) != dims {
        return Err(OpticsError::DimensionMismatch {
            expected: dims,
            got: (atoms.width(), atoms.height()),
        });
    }
    if supersampling == 0 || !dims.0.is_multiple_of(supersampling) || !dims.1.is_multiple_of(supersampling) {
        return Err(OpticsError::Invalid {
            field: "supersampling",
            constraint: "must divide the grid dimensions",
        });
    }
    let total = atoms.sum() * photons_per_atom;
    if total == 0.0 {
        return Ok(ScalarField2D::zeros(dims.0 / supersampling, dims.1 / supersampling));
    }
    let transfer = ComplexField2D::from_real(mtf);
    let blurred = convolve_abs(atoms, &transfer, &Fft2::new(dims.0, dims.1));
    Ok(rescale_and_bin(blurred, total, supersampling))
}

/// Prebuilt optics for one camera geometry. Immutable and shareable between
/// threads once constructed.
pub struct OpticalSystem {
    config: OpticalConfig,
    grid: AtomGrid,
    fft_width: usize,
    fft_height: usize,
    transfer: ComplexField2D,
    fft: Fft2,
}

impl OpticalSystem {
    /// Builds the transfer function for a `width × height` camera image. The
    /// FFT grid is the supersampled image padded up to powers of two.
    pub fn new(config: &OpticalConfig, width: usize, height: usize) -> Result<Self, OpticsError> {
        config.validate()?;
        if width == 0 || height == 0 {
            return Err(OpticsError::Invalid {
                field: "resolution",
                constraint: "must be non-zero",
            });
        }
        let s = config.supersampling;
        let (fw, fh) = (padded_len(width * s), padded_len(height * s));
        Ok(Self {
            config: config.clone(),
            grid: AtomGrid::new(width, height, s),
            fft_width: fw,
            fft_height: fh,
            transfer: transfer_function(config, fw, fh),
            fft: Fft2::new(fw, fh),
        })
    }

    /// Same geometry as `new`, with the transfer function built from a
    /// basis on the padded FFT grid (see [`OpticalSystem::pupil_basis`]) and
    /// aberrations `coefficients`. Used when many coefficient sets are tried.
    pub fn with_basis(
        config: &OpticalConfig,
        width: usize,
        height: usize,
        basis: &PupilBasis,
        coefficients: &ZernikeCoefficients,
    ) -> Result<Self, OpticsError> {
        config.validate()?;
        if width == 0 || height == 0 {
            return Err(OpticsError::Invalid {
                field: "resolution",
                constraint: "must be non-zero",
            });
        }
        let s = config.supersampling;
        let (fw, fh) = (padded_len(width * s), padded_len(height * s));
        if (basis.width, basis.height) != (fw, fh) {
            return Err(OpticsError::DimensionMismatch {
                expected: (fw, fh),
                got: (basis.width, basis.height),
            });
        }
        Ok(Self {
            config: OpticalConfig {
                zernike: *coefficients,
                ..config.clone()
            },
            grid: AtomGrid::new(width, height, s),
            fft_width: fw,
            fft_height: fh,
            transfer: transfer_from_basis(basis, config, coefficients),
            fft: Fft2::new(fw, fh),
        })
    }

    /// Pupil basis matching the FFT grid `new` would build for this geometry.
    pub fn pupil_basis(config: &OpticalConfig, width: usize, height: usize) -> PupilBasis {
        let s = config.supersampling;
        PupilBasis::new(
            config.effective_pupil_fraction(),
            padded_len(width.max(1) * s),
            padded_len(height.max(1) * s),
        )
    }

    pub fn config(&self) -> &OpticalConfig {
        &self.config
    }

    pub fn atom_grid(&self) -> AtomGrid {
        self.grid
    }

    /// Dimensions of the padded FFT grid.
    pub fn fft_dims(&self) -> (usize, usize) {
        (self.fft_width, self.fft_height)
    }

    pub fn transfer(&self) -> &ComplexField2D {
        &self.transfer
    }

    /// Expected photons per camera pixel for a supersampled atom array.
    pub fn render(&self, atoms: &ScalarField2D, photons_per_atom: f64) -> Result<ScalarField2D, OpticsError> {
        let s = self.grid.supersampling;
        let (w, h) = (self.grid.width * s, self.grid.height * s);
        if (atoms.width(), atoms.height()) != (w, h) {
            return Err(OpticsError::DimensionMismatch {
                expected: (w, h),
                got: (atoms.width(), atoms.height()),
            });
        }
        let total = atoms.sum() * photons_per_atom;
        if total == 0.0 {
            return Ok(ScalarField2D::zeros(self.grid.width, self.grid.height));
        }
        let mut padded = ScalarField2D::zeros(self.fft_width, self.fft_height);
        for row in 0..h {
            padded.as_mut_slice()[row * self.fft_width..row * self.fft_width + w]
                .copy_from_slice(&atoms.as_slice()[row * w..(row + 1) * w]);
        }
        let blurred = convolve_abs(&padded, &self.transfer, &self.fft);
        let cropped = if (w, h) == (self.fft_width, self.fft_height) {
            blurred
        } else {
            blurred.crop(0, 0, w, h)
        };
        Ok(rescale_and_bin(cropped, total, s))
    }

    /// Normalized camera-resolution response to a single atom at camera
    /// pixel `(row, col)`.
    pub fn spot(&self, row: usize, col: usize) -> ScalarField2D {
        let mut atoms = self.grid.zeros();
        let (r, c) = self.grid.sub_index(row, col);
        atoms.set(r, c, 1.0);
        self.render(&atoms, 1.0).expect("grid built from this system")
    }
}

/// Fraction of the total of `field` in pixels whose centres lie within
/// `radius` of `center = (row, col)`.
pub fn encircled_energy(field: &ScalarField2D, center: (f64, f64), radius: f64) -> f64 {
    let total = field.sum();
    if total == 0.0 {
        return 0.0;
    }
    let r2 = radius * radius;
    let mut inside = 0.0;
    for row in 0..field.height() {
        let dy = row as f64 - center.0;
        if dy * dy > r2 {
            continue;
        }
        for col in 0..field.width() {
            let dx = col as f64 - center.1;
            if dx * dx + dy * dy <= r2 {
                inside += field.get(row, col);
            }
        }
    }
    inside / total
}

/// Bounds on the first dark ring radius in the focal plane, in metres:
/// `1.22·λ/(2NA) < r < 1.22·√2·λ/(2NA)`.
pub fn airy_radius_bounds(wavelength: f64, numerical_aperture: f64) -> (f64, f64) {
    let lower = AIRY_FIRST_ZERO * wavelength / (2.0 * numerical_aperture);
    (lower, lower * 2f64.sqrt())
}

/// The same bounds expressed in pixels on the camera.
pub fn airy_roi_radius(
    wavelength: f64,
    numerical_aperture: f64,
    magnification: f64,
    binned_pixel_size: f64,
) -> (f64, f64) {
    let (lo, hi) = airy_radius_bounds(wavelength, numerical_aperture);
    let k = magnification / binned_pixel_size;
    (lo * k, hi * k)
}

/// Fraction of isotropic emission collected by a lens, `(1 − √(1 − NA²))/2`.
pub fn solid_angle(numerical_aperture: f64) -> f64 {
    (1.0 - (1.0 - numerical_aperture * numerical_aperture).sqrt()) / 2.0
}

/// Photons reaching the camera from one atom that survives the whole exposure.
pub fn photons_per_atom(scattering_rate: f64, exposure_time: f64, numerical_aperture: f64) -> f64 {
    scattering_rate * exposure_time * solid_angle(numerical_aperture)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centre(f: &ScalarField2D) -> (f64, f64) {
        ((f.height() / 2) as f64, (f.width() / 2) as f64)
    }

    #[test]
    fn unaberrated_pupil_is_a_disk() {
        let pupil = pupil_field(&ZernikeCoefficients::default(), 0.5, 256, 256);
        let count = pupil.as_slice().iter().filter(|v| v.norm() > 0.0).count() as f64;
        let area = PI * 64.0 * 64.0;
        assert!((count - area).abs() < 0.01 * area, "{count} vs {area}");
        assert!(pupil.as_slice().iter().all(|v| v.im == 0.0 && (v.re == 0.0 || v.re == 1.0)));
    }

    #[test]
    fn tilt_pupil_phase_is_linear() {
        let c = 0.01;
        let coeffs = ZernikeCoefficients::default().with(ZernikeTerm::TiltX, c);
        let pupil = pupil_field(&coeffs, 0.5, 64, 64);
        for row in 0..64 {
            for col in 0..64 {
                let v = pupil.get(row, col);
                if v.norm() == 0.0 {
                    continue;
                }
                let x = (col as f64 - 32.0) / 16.0;
                let expect = Complex64::from_polar(1.0, PHASE_PER_UNIT * c * 2.0 * x);
                assert!((v - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn airy_first_ring_energy() {
        let psf = pupil_to_psf(&pupil_field(&ZernikeCoefficients::default(), 0.5, 256, 256));
        assert!((psf.sum() - 1.0).abs() < 1e-12);
        assert_eq!(psf.argmax(), (128, 128));
        let ee = encircled_energy(&psf, centre(&psf), AIRY_FIRST_ZERO / 0.5);
        assert!((ee - 0.838).abs() < 0.01, "{ee}");
    }

    #[test]
    fn basis_system_matches_direct_construction() {
        let coeffs = ZernikeCoefficients::default()
            .with(ZernikeTerm::Defocus, 0.07)
            .with(ZernikeTerm::HorizontalComa, 0.01)
            .with(ZernikeTerm::TiltY, 0.02);
        let config = OpticalConfig {
            zernike: coeffs,
            supersampling: 2,
            ..OpticalConfig::default()
        };
        let direct = OpticalSystem::new(&config, 24, 20).unwrap();
        let basis = OpticalSystem::pupil_basis(&config, 24, 20);
        let reused = OpticalSystem::with_basis(&config, 24, 20, &basis, &coeffs).unwrap();
        assert_eq!(direct.spot(10, 12).as_slice(), reused.spot(10, 12).as_slice());
        let wrong = PupilBasis::new(0.25, 16, 16);
        assert!(matches!(
            OpticalSystem::with_basis(&config, 24, 20, &wrong, &coeffs),
            Err(OpticsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tilt_shifts_without_reshaping() {
        let n = 128;
        let base = pupil_to_psf(&pupil_field(&ZernikeCoefficients::default(), 0.5, n, n));
        // 8c/f = 2: an exact two-pixel circular shift.
        let coeffs = ZernikeCoefficients::default().with(ZernikeTerm::TiltX, 2.0 * 0.5 / 8.0);
        let tilted = pupil_to_psf(&pupil_field(&coeffs, 0.5, n, n));
        assert_eq!(tilted.argmax(), (n / 2, n / 2 + 2));
        for row in 0..n {
            for col in 0..n {
                let d = (tilted.get(row, (col + 2) % n) - base.get(row, col)).abs();
                assert!(d < 1e-6, "({row},{col}) {d}");
            }
        }
    }

    #[test]
    fn mtf_basic_properties() {
        let coeffs = ZernikeCoefficients::default()
            .with(ZernikeTerm::Defocus, 0.07)
            .with(ZernikeTerm::HorizontalComa, 0.02);
        let psf = pupil_to_psf(&pupil_field(&coeffs, 0.5, 64, 64));
        let mtf = psf_to_mtf(&psf);
        assert_eq!(mtf.get(0, 0), 1.0);
        assert!(mtf.as_slice().iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn diffraction_limited_mtf_matches_disk_autocorrelation() {
        let n = 512;
        let psf = pupil_to_psf(&pupil_field(&ZernikeCoefficients::default(), 0.5, n, n));
        let mtf = psf_to_mtf(&psf);
        let cutoff = 0.5 * n as f64; // twice the pupil radius of n/4
        for k in 0..(0.95 * cutoff) as usize {
            let v = k as f64 / cutoff;
            let analytic = 2.0 / PI * (v.acos() - v * (1.0 - v * v).sqrt());
            let d = (mtf.get(0, k) - analytic).abs();
            assert!(d < 0.01, "k={k}: {} vs {analytic}", mtf.get(0, k));
        }
    }

    #[test]
    fn unaberrated_psf_round_trips_through_mtf() {
        let psf = pupil_to_psf(&pupil_field(&ZernikeCoefficients::default(), 0.5, 128, 128));
        let back = psf_from_mtf(&psf_to_mtf(&psf));
        for (a, b) in psf.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn apply_optics_conserves_and_handles_empty() {
        let n = 64;
        let psf = pupil_to_psf(&pupil_field(
            &ZernikeCoefficients::default().with(ZernikeTerm::PrimarySpherical, 0.03),
            0.5,
            n,
            n,
        ));
        let mtf = psf_to_mtf(&psf);
        let empty = apply_optics(&ScalarField2D::zeros(n, n), &mtf, 100.0, 1).unwrap();
        assert!(empty.as_slice().iter().all(|v| *v == 0.0));

        let mut atoms = ScalarField2D::zeros(n, n);
        atoms.set(20, 30, 1.0);
        atoms.set(40, 10, 0.25);
        let map = apply_optics(&atoms, &mtf, 1234.5, 2).unwrap();
        assert_eq!((map.width(), map.height()), (32, 32));
        let expected = 1.25 * 1234.5;
        assert!((map.sum() - expected).abs() < 1e-9 * expected);
        assert!(map.as_slice().iter().all(|v| *v >= 0.0));

        let bad = apply_optics(&ScalarField2D::zeros(32, 64), &mtf, 1.0, 1);
        assert!(matches!(bad, Err(OpticsError::DimensionMismatch { .. })));
    }

    #[test]
    fn rendering_is_linear_for_distant_atoms() {
        let config = OpticalConfig {
            zernike: ZernikeCoefficients::default().with(ZernikeTerm::Defocus, 0.05),
            ..OpticalConfig::default()
        };
        let system = OpticalSystem::new(&config, 64, 64).unwrap();
        let grid = system.atom_grid();
        let single = |r, c| {
            let mut a = grid.zeros();
            let (i, j) = grid.sub_index(r, c);
            a.set(i, j, 1.0);
            a
        };
        let a = system.render(&single(16, 16), 500.0).unwrap();
        let b = system.render(&single(48, 44), 500.0).unwrap();
        let mut both = single(16, 16);
        let (i, j) = grid.sub_index(48, 44);
        both.set(i, j, 1.0);
        let ab = system.render(&both, 500.0).unwrap();
        let peak = ab.max();
        for k in 0..ab.as_slice().len() {
            let sum = a.as_slice()[k] + b.as_slice()[k];
            assert!((ab.as_slice()[k] - sum).abs() <= 1e-6 * peak);
        }
    }

    #[test]
    fn system_tilt_moves_spot() {
        let mut config = OpticalConfig::default();
        let base = OpticalSystem::new(&config, 32, 32).unwrap().spot(16, 16);
        config.zernike.tilt_y = 0.5 / 8.0; // one pixel down
        let shifted = OpticalSystem::new(&config, 32, 32).unwrap().spot(16, 16);
        for row in 0..32 {
            for col in 0..32 {
                let d = (shifted.get((row + 1) % 32, col) - base.get(row, col)).abs();
                assert!(d < 1e-9, "({row},{col}) {d}");
            }
        }
    }

    #[test]
    fn supersampling_agrees_after_binning() {
        // Factor 1 samples the PSF at pixel centres while higher factors
        // integrate it over the pixel, which lowers the peak by a few
        // percent of its value. Agreement is therefore measured against
        // the total flux, and on the ROI sum that detection relies on.
        let n = 64;
        let one = OpticalSystem::new(&OpticalConfig::default(), n, n).unwrap().spot(32, 32);
        for s in [2, 3] {
            let config = OpticalConfig {
                supersampling: s,
                ..OpticalConfig::default()
            };
            let many = OpticalSystem::new(&config, n, n).unwrap().spot(32, 32);
            assert_eq!(many.argmax(), (32, 32));
            for (a, b) in one.as_slice().iter().zip(many.as_slice()) {
                assert!((a - b).abs() < 0.02, "s={s}: {a} vs {b}");
            }
            let roi_one = encircled_energy(&one, (32.0, 32.0), 3.0);
            let roi_many = encircled_energy(&many, (32.0, 32.0), 3.0);
            assert!((roi_one - roi_many).abs() < 0.02 * roi_one, "{roi_one} {roi_many}");
        }
    }

    #[test]
    fn non_power_of_two_camera_is_padded() {
        let system = OpticalSystem::new(&OpticalConfig::default(), 20, 12).unwrap();
        assert_eq!(system.fft_dims(), (32, 16));
        let spot = system.spot(6, 10);
        assert_eq!((spot.width(), spot.height()), (20, 12));
        assert!((spot.sum() - 1.0).abs() < 1e-12);
        assert_eq!(spot.argmax(), (6, 10));
    }

    #[test]
    fn airy_bounds_and_solid_angle() {
        let (lo, hi) = airy_radius_bounds(461e-9, 0.65);
        assert!((lo - 0.433e-6).abs() < 0.001e-6 && (hi - 0.612e-6).abs() < 0.0015e-6);
        let (plo, phi) = airy_roi_radius(461e-9, 0.65, 156.25, 32e-6);
        assert!((plo - 2.115).abs() < 0.01 && (phi - 2.99).abs() < 0.01, "{plo} {phi}");
        let (limit, _) = airy_radius_bounds(500e-9, 1.0 - 1e-12);
        assert!((limit - 1.22 * 500e-9 / 2.0).abs() < 1e-15);
        assert!((solid_angle(0.65) - 0.120).abs() < 5e-4);
        assert_eq!(solid_angle(0.0), 0.0);
        assert_eq!(solid_angle(1.0), 0.5);
    }

    #[test]
    fn encircled_energy_edge_cases() {
        let psf = pupil_to_psf(&pupil_field(&ZernikeCoefficients::default(), 0.5, 64, 64));
        assert!((encircled_energy(&psf, centre(&psf), 100.0) - 1.0).abs() < 1e-12);
        let e0 = encircled_energy(&psf, centre(&psf), 0.0);
        assert!((e0 - psf.max()).abs() < 1e-15);
    }

    #[test]
    fn validation_names_fields() {
        let bad = OpticalConfig {
            pupil_radius_fraction: 1.5,
            ..OpticalConfig::default()
        };
        assert!(matches!(bad.validate(), Err(OpticsError::Invalid { field: "pupil_radius_fraction", .. })));
        let bad = OpticalConfig {
            supersampling: 0,
            ..OpticalConfig::default()
        };
        assert!(matches!(bad.validate(), Err(OpticsError::Invalid { field: "supersampling", .. })));
    }
}
