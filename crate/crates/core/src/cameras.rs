//! Camera readout models.
//!
//! Both models turn an expected-photon map into a quantized 16-bit frame.
//! The EMCCD path samples photoelectrons and spurious charge, amplifies them
//! in the gain register and reads them out with a Gaussian amplifier. The
//! CMOS path has no amplification but every pixel carries its own offset,
//! gain and dark rate, fixed when the sensor is initialized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::ScalarField2D;
use crate::sampling::{
    sample_em_gain, sample_gamma, sample_gaussian, sample_gumbel_zero_mean, sample_poisson,
    RandomState, SamplingError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("photon map is {got:?} but the camera produces {expected:?} frames")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid camera parameter `{field}`: {constraint}")]
    Invalid {
        field: &'static str,
        constraint: &'static str,
    },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

fn invalid<T>(field: &'static str, constraint: &'static str) -> Result<T, CameraError> {
    Err(CameraError::Invalid { field, constraint })
}

/// Final frame, row-major 16-bit samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU16 {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl ImageU16 {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u16>) -> Self {
        assert_eq!(data.len(), width * height, "buffer does not match dimensions");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.data[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<u16> {
        self.data
    }

    pub fn to_field(&self) -> ScalarField2D {
        ScalarField2D::from_vec(self.width, self.height, self.data.iter().map(|&v| f64::from(v)).collect())
    }
}

/// ADC conversion: round half to even, clamp to the 16-bit range.
#[inline]
pub fn quantize(value: f64) -> u16 {
    if value.is_nan() {
        return 0;
    }
    value.round_ties_even().clamp(0.0, 65535.0) as u16
}

/// Electron-multiplying CCD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfigEMCCD {
    #[serde(default = "emccd_defaults::quantum_efficiency")]
    pub quantum_efficiency: f64,
    /// Electrons per physical pixel per second.
    #[serde(default)]
    pub dark_current: f64,
    /// Clock-induced charge events per physical pixel per frame.
    #[serde(default)]
    pub cic_rate: f64,
    /// Serial clock-induced charge events per binned pixel per frame.
    #[serde(default)]
    pub scic_rate: f64,
    /// Stray photons per physical pixel per second.
    #[serde(default)]
    pub stray_rate: f64,
    /// Mean electron multiplication.
    #[serde(default = "emccd_defaults::em_gain")]
    pub em_gain: f64,
    /// Electrons per count.
    #[serde(default = "emccd_defaults::preamp_gain")]
    pub preamp_gain: f64,
    /// Counts added to every pixel.
    #[serde(default = "emccd_defaults::bias_clamp")]
    pub bias_clamp: f64,
    /// Readout noise in counts.
    #[serde(default = "emccd_defaults::readout_sigma")]
    pub readout_sigma: f64,
    /// Seconds; taken from the experiment when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<f64>,
    /// Physical pixels.
    #[serde(default = "emccd_defaults::resolution")]
    pub width: usize,
    #[serde(default = "emccd_defaults::resolution")]
    pub height: usize,
    #[serde(default = "emccd_defaults::binning")]
    pub binning: usize,
}

mod emccd_defaults {
    pub fn quantum_efficiency() -> f64 {
        0.86
    }
    pub fn em_gain() -> f64 {
        300.0
    }
    pub fn preamp_gain() -> f64 {
        4.85
    }
    pub fn bias_clamp() -> f64 {
        400.0
    }
    pub fn readout_sigma() -> f64 {
        10.0
    }
    pub fn resolution() -> usize {
        512
    }
    pub fn binning() -> usize {
        1
    }
}

impl Default for CameraConfigEMCCD {
    fn default() -> Self {
        Self {
            quantum_efficiency: emccd_defaults::quantum_efficiency(),
            dark_current: 0.0,
            cic_rate: 0.0,
            scic_rate: 0.0,
            stray_rate: 0.0,
            em_gain: emccd_defaults::em_gain(),
            preamp_gain: emccd_defaults::preamp_gain(),
            bias_clamp: emccd_defaults::bias_clamp(),
            readout_sigma: emccd_defaults::readout_sigma(),
            exposure: None,
            width: emccd_defaults::resolution(),
            height: emccd_defaults::resolution(),
            binning: emccd_defaults::binning(),
        }
    }
}

fn non_negative(v: f64) -> bool {
    v >= 0.0 && v.is_finite()
}

fn check_exposure(exposure: Option<f64>) -> Result<(), CameraError> {
    match exposure {
        Some(t) if !(t > 0.0 && t.is_finite()) => invalid("exposure", "must be positive"),
        _ => Ok(()),
    }
}

impl CameraConfigEMCCD {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return invalid("quantum_efficiency", "must lie in [0, 1]");
        }
        for (field, v) in [
            ("dark_current", self.dark_current),
            ("cic_rate", self.cic_rate),
            ("scic_rate", self.scic_rate),
            ("stray_rate", self.stray_rate),
            ("bias_clamp", self.bias_clamp),
            ("readout_sigma", self.readout_sigma),
        ] {
            if !non_negative(v) {
                return invalid(field, "must be finite and non-negative");
            }
        }
        if !(self.em_gain >= 1.0 && self.em_gain.is_finite()) {
            return invalid("em_gain", "must be at least 1");
        }
        if !(self.preamp_gain > 0.0 && self.preamp_gain.is_finite()) {
            return invalid("preamp_gain", "must be positive");
        }
        check_exposure(self.exposure)?;
        if self.binning == 0 {
            return invalid("binning", "must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return invalid("width", "resolution must be non-zero");
        }
        if !self.width.is_multiple_of(self.binning) || !self.height.is_multiple_of(self.binning) {
            return invalid("binning", "must divide the resolution");
        }
        Ok(())
    }

    /// Size of a read-out frame in binned pixels.
    pub fn frame_dims(&self) -> (usize, usize) {
        (self.width / self.binning, self.height / self.binning)
    }
}

fn check_dims(map: &ScalarField2D, expected: (usize, usize)) -> Result<(), CameraError> {
    let got = (map.width(), map.height());
    if got != expected {
        return Err(CameraError::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn exposure_of(exposure: Option<f64>) -> Result<f64, CameraError> {
    exposure.ok_or(CameraError::Invalid {
        field: "exposure",
        constraint: "must be set on the camera or inherited from the experiment",
    })
}

/// Reads out one EMCCD frame from expected photons per binned pixel.
///
/// Per pixel, in draw order: primaries `x ~ Poisson(QE·(photons + stray) +
/// dark + CIC)` with time and area factors applied, EM gain on `x`, a
/// Poisson number of serial CIC events each amplified as a single primary,
/// then Gaussian readout around `n/preamp + bias`.
pub fn simulate_emccd(
    map: &ScalarField2D,
    cfg: &CameraConfigEMCCD,
    state: &mut RandomState,
) -> Result<ImageU16, CameraError> {
    cfg.validate()?;
    let (w, h) = cfg.frame_dims();
    check_dims(map, (w, h))?;
    let exposure = exposure_of(cfg.exposure)?;
    let area = (cfg.binning * cfg.binning) as f64;
    let background = cfg.quantum_efficiency * cfg.stray_rate * exposure * area
        + cfg.dark_current * exposure * area
        + cfg.cic_rate * area;
    let g = cfg.em_gain;
    let mut out = Vec::with_capacity(w * h);
    for &photons in map.as_slice() {
        let lambda = cfg.quantum_efficiency * photons + background;
        let primaries = sample_poisson(state, lambda)?;
        let mut electrons = sample_em_gain(state, primaries, g)?;
        if cfg.scic_rate > 0.0 {
            let events = sample_poisson(state, cfg.scic_rate)?;
            for _ in 0..events {
                electrons += sample_em_gain(state, 1, g)?;
            }
        }
        let counts = electrons / cfg.preamp_gain + cfg.bias_clamp;
        out.push(quantize(sample_gaussian(state, counts, cfg.readout_sigma)?));
    }
    Ok(ImageU16::from_vec(w, h, out))
}

/// CMOS sensor with per-pixel fixed-pattern noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfigCMOS {
    #[serde(default = "cmos_defaults::quantum_efficiency")]
    pub quantum_efficiency: f64,
    /// Seconds; taken from the experiment when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<f64>,
    #[serde(default = "cmos_defaults::resolution")]
    pub width: usize,
    #[serde(default = "cmos_defaults::resolution")]
    pub height: usize,
    /// Nominal offset in counts.
    #[serde(default = "cmos_defaults::offset")]
    pub offset: f64,
    /// Spread of the per-pixel offset term, counts.
    #[serde(default)]
    pub offset_pixel_sigma: f64,
    /// Spread of the static per-row offset term, counts.
    #[serde(default)]
    pub offset_row_sigma: f64,
    /// Scale of the zero-mean Gumbel column term, which also absorbs flicker.
    #[serde(default)]
    pub column_gumbel_beta: f64,
    /// Nominal conversion gain, counts per electron.
    #[serde(default = "cmos_defaults::gain")]
    pub gain: f64,
    #[serde(default)]
    pub gain_sigma: f64,
    /// Gamma shape of the per-pixel dark rate; zero disables dark current.
    #[serde(default)]
    pub dark_shape: f64,
    /// Gamma scale of the per-pixel dark rate, electrons per second.
    #[serde(default)]
    pub dark_scale: f64,
    /// Per-frame row noise, counts.
    #[serde(default)]
    pub row_noise_sigma: f64,
    /// Combined Gaussian read noise, counts.
    #[serde(default = "cmos_defaults::read_sigma")]
    pub read_sigma: f64,
    /// Stray photons per pixel per second.
    #[serde(default)]
    pub stray_rate: f64,
    /// Seed of the fixed pattern, independent of the frame seeds.
    #[serde(default)]
    pub sensor_seed: u64,
}

mod cmos_defaults {
    pub fn quantum_efficiency() -> f64 {
        0.8
    }
    pub fn resolution() -> usize {
        512
    }
    pub fn offset() -> f64 {
        200.0
    }
    pub fn gain() -> f64 {
        2.0
    }
    pub fn read_sigma() -> f64 {
        1.5
    }
}

impl Default for CameraConfigCMOS {
    fn default() -> Self {
        Self {
            quantum_efficiency: cmos_defaults::quantum_efficiency(),
            exposure: None,
            width: cmos_defaults::resolution(),
            height: cmos_defaults::resolution(),
            offset: cmos_defaults::offset(),
            offset_pixel_sigma: 0.0,
            offset_row_sigma: 0.0,
            column_gumbel_beta: 0.0,
            gain: cmos_defaults::gain(),
            gain_sigma: 0.0,
            dark_shape: 0.0,
            dark_scale: 0.0,
            row_noise_sigma: 0.0,
            read_sigma: cmos_defaults::read_sigma(),
            stray_rate: 0.0,
            sensor_seed: 0,
        }
    }
}

impl CameraConfigCMOS {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(0.0..=1.0).contains(&self.quantum_efficiency) {
            return invalid("quantum_efficiency", "must lie in [0, 1]");
        }
        check_exposure(self.exposure)?;
        if self.width == 0 || self.height == 0 {
            return invalid("width", "resolution must be non-zero");
        }
        for (field, v) in [
            ("offset", self.offset),
            ("offset_pixel_sigma", self.offset_pixel_sigma),
            ("offset_row_sigma", self.offset_row_sigma),
            ("column_gumbel_beta", self.column_gumbel_beta),
            ("gain_sigma", self.gain_sigma),
            ("dark_shape", self.dark_shape),
            ("dark_scale", self.dark_scale),
            ("row_noise_sigma", self.row_noise_sigma),
            ("read_sigma", self.read_sigma),
            ("stray_rate", self.stray_rate),
        ] {
            if !non_negative(v) {
                return invalid(field, "must be finite and non-negative");
            }
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return invalid("gain", "must be positive");
        }
        Ok(())
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Fixed per-pixel state of one CMOS sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelCharacteristics {
    pub width: usize,
    pub height: usize,
    /// Total static offset per pixel, counts.
    pub offset: Vec<f64>,
    /// Counts per electron per pixel.
    pub gain: Vec<f64>,
    /// Electrons per second per pixel.
    pub dark_rate: Vec<f64>,
    /// The Gumbel column terms contained in `offset`, one per column.
    pub column_offset: Vec<f64>,
    /// The Gaussian row terms contained in `offset`, one per row.
    pub row_offset: Vec<f64>,
}

/// Draws the fixed pattern of a sensor. The result depends only on the
/// configuration and `sensor_seed`.
///
/// Offsets are `nominal + row(i) + column(j) + pixel(i, j)` with Gaussian
/// row and pixel terms and zero-mean Gumbel column terms. Gains are Gaussian
/// around the nominal gain, truncated at zero; dark rates are Gamma.
pub fn init_cmos_sensor(cfg: &CameraConfigCMOS, sensor_seed: u64) -> Result<PixelCharacteristics, CameraError> {
    cfg.validate()?;
    let (w, h) = cfg.frame_dims();
    let mut state = RandomState::new(sensor_seed);
    let row_offset = (0..h)
        .map(|_| sample_gaussian(&mut state, 0.0, cfg.offset_row_sigma))
        .collect::<Result<Vec<_>, _>>()?;
    let column_offset = (0..w)
        .map(|_| {
            if cfg.column_gumbel_beta > 0.0 {
                sample_gumbel_zero_mean(&mut state, cfg.column_gumbel_beta)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut offset = Vec::with_capacity(w * h);
    let mut gain = Vec::with_capacity(w * h);
    let mut dark_rate = Vec::with_capacity(w * h);
    let dark_enabled = cfg.dark_shape > 0.0 && cfg.dark_scale > 0.0;
    for row_term in &row_offset {
        for col_term in &column_offset {
            let pixel = sample_gaussian(&mut state, 0.0, cfg.offset_pixel_sigma)?;
            offset.push(cfg.offset + row_term + col_term + pixel);
            gain.push(sample_gaussian(&mut state, cfg.gain, cfg.gain_sigma)?.max(0.0));
            dark_rate.push(if dark_enabled {
                sample_gamma(&mut state, cfg.dark_shape, cfg.dark_scale)?
            } else {
                0.0
            });
        }
    }
    Ok(PixelCharacteristics {
        width: w,
        height: h,
        offset,
        gain,
        dark_rate,
        column_offset,
        row_offset,
    })
}

/// Reads out one CMOS frame.
///
/// Draw order: one row-noise value per row, then per pixel the electron
/// count `Poisson(QE·(photons + stray·t) + dark·t)` and the read noise.
pub fn simulate_cmos(
    map: &ScalarField2D,
    cfg: &CameraConfigCMOS,
    chars: &PixelCharacteristics,
    state: &mut RandomState,
) -> Result<ImageU16, CameraError> {
    cfg.validate()?;
    let (w, h) = cfg.frame_dims();
    check_dims(map, (w, h))?;
    if (chars.width, chars.height) != (w, h) {
        return Err(CameraError::DimensionMismatch {
            expected: (w, h),
            got: (chars.width, chars.height),
        });
    }
    let exposure = exposure_of(cfg.exposure)?;
    let stray = cfg.quantum_efficiency * cfg.stray_rate * exposure;
    let row_noise = (0..h)
        .map(|_| sample_gaussian(state, 0.0, cfg.row_noise_sigma))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(w * h);
    for (i, &photons) in map.as_slice().iter().enumerate() {
        let lambda = cfg.quantum_efficiency * photons + stray + chars.dark_rate[i] * exposure;
        let electrons = sample_poisson(state, lambda)? as f64;
        let mean = chars.offset[i] + chars.gain[i] * electrons + row_noise[i / w];
        out.push(quantize(sample_gaussian(state, mean, cfg.read_sigma)?));
    }
    Ok(ImageU16::from_vec(w, h, out))
}

/// Camera choice as it appears in a configuration document, externally
/// tagged: `{"emccd": {...}}` or `{"cmos": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CameraConfig {
    Emccd(CameraConfigEMCCD),
    Cmos(CameraConfigCMOS),
}

impl CameraConfig {
    pub fn validate(&self) -> Result<(), CameraError> {
        match self {
            CameraConfig::Emccd(c) => c.validate(),
            CameraConfig::Cmos(c) => c.validate(),
        }
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        match self {
            CameraConfig::Emccd(c) => c.frame_dims(),
            CameraConfig::Cmos(c) => c.frame_dims(),
        }
    }

    pub fn exposure(&self) -> Option<f64> {
        match self {
            CameraConfig::Emccd(c) => c.exposure,
            CameraConfig::Cmos(c) => c.exposure,
        }
    }

    pub fn set_exposure(&mut self, exposure: f64) {
        match self {
            CameraConfig::Emccd(c) => c.exposure = Some(exposure),
            CameraConfig::Cmos(c) => c.exposure = Some(exposure),
        }
    }

    /// Physical pixels per frame pixel along one axis.
    pub fn binning(&self) -> usize {
        match self {
            CameraConfig::Emccd(c) => c.binning,
            CameraConfig::Cmos(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CameraConfig::Emccd(_) => "emccd",
            CameraConfig::Cmos(_) => "cmos",
        }
    }
}

/// A camera ready to read out frames, with any fixed pattern already drawn.
#[derive(Clone, Debug)]
pub enum Sensor {
    Emccd(CameraConfigEMCCD),
    Cmos(CameraConfigCMOS, PixelCharacteristics),
}

impl Sensor {
    pub fn new(config: &CameraConfig) -> Result<Self, CameraError> {
        Ok(match config {
            CameraConfig::Emccd(c) => {
                c.validate()?;
                Sensor::Emccd(c.clone())
            }
            CameraConfig::Cmos(c) => Sensor::Cmos(c.clone(), init_cmos_sensor(c, c.sensor_seed)?),
        })
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        match self {
            Sensor::Emccd(c) => c.frame_dims(),
            Sensor::Cmos(c, _) => c.frame_dims(),
        }
    }

    pub fn read_out(&self, map: &ScalarField2D, state: &mut RandomState) -> Result<ImageU16, CameraError> {
        match self {
            Sensor::Emccd(c) => simulate_emccd(map, c, state),
            Sensor::Cmos(c, chars) => simulate_cmos(map, c, chars, state),
        }
    }
}
