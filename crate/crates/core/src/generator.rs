//! Frame generation from a validated configuration.
//!
//! A [`Generator`] holds everything that is fixed across frames: the site
//! map, the optical transfer function and the sensor's fixed pattern. Each
//! frame draws from its own random stream, `RandomState::new(seed).fork(index)`,
//! so a frame depends only on `(configuration, seed, index)` and never on
//! which other frames were generated or in which order.

use std::path::Path;

use thiserror::Error;

use crate::cameras::{CameraError, ImageU16, Sensor};
use crate::config::{load_config, ConfigError, SimulationConfig};
use crate::experiment::{apply_imaging_loss, build_site_map, sample_occupancy, ExperimentError, Site};
use crate::io::FrameTruth;
use crate::optics::{photons_per_atom, OpticalSystem, OpticsError};
use crate::sampling::RandomState;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// One simulated frame and the truth that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: ImageU16,
    pub truth: FrameTruth,
}

/// Immutable, thread-safe frame source for one configuration.
pub struct Generator {
    config: SimulationConfig,
    sites: Vec<Site>,
    optics: OpticalSystem,
    sensor: Sensor,
    photons_per_atom: f64,
}

impl Generator {
    pub fn new(config: SimulationConfig) -> Result<Self, GenerateError> {
        config.validate()?;
        let (width, height) = config.camera.frame_dims();
        let sites = build_site_map(&config.experiment, width, height)?;
        let optics = OpticalSystem::new(&config.optics, width, height)?;
        let sensor = Sensor::new(&config.camera)?;
        let photons_per_atom = photons_per_atom(
            config.experiment.scattering_rate,
            config.experiment.exposure_time,
            config.optics.numerical_aperture,
        );
        Ok(Self {
            config,
            sites,
            optics,
            sensor,
            photons_per_atom,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, GenerateError> {
        Self::new(load_config(path)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self, GenerateError> {
        Self::new(SimulationConfig::from_json_str(text)?)
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn optics(&self) -> &OpticalSystem {
        &self.optics
    }

    /// `(width, height)` of every frame.
    pub fn frame_dims(&self) -> (usize, usize) {
        self.sensor.frame_dims()
    }

    /// Photons reaching the sensor from one atom that survives the exposure.
    pub fn photons_per_atom(&self) -> f64 {
        self.photons_per_atom
    }

    /// Frame `index` of the corpus seeded by `seed`.
    ///
    /// Occupancy and loss draw from fork 0 of the frame's stream and the
    /// camera from fork 1, so changing the camera leaves the atoms unchanged.
    pub fn generate_frame(&self, seed: u64, index: u64) -> Result<Frame, GenerateError> {
        let frame_state = RandomState::new(seed).fork(index);
        let mut atoms_state = frame_state.fork(0);
        let mut camera_state = frame_state.fork(1);

        let occupancy = sample_occupancy(&mut atoms_state, &self.sites, &self.config.experiment);
        let (truth, atoms) = apply_imaging_loss(
            &mut atoms_state,
            &occupancy,
            self.config.experiment.survival_probability,
            self.optics.atom_grid(),
        )?;
        let photons = self.optics.render(&atoms, self.photons_per_atom)?;
        let image = self.sensor.read_out(&photons, &mut camera_state)?;
        Ok(Frame {
            image,
            truth: FrameTruth::new(truth, seed, index),
        })
    }
}
