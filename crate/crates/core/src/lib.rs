//! Simulation of fluorescence images of neutral-atom arrays.
//!
//! A frame is produced in three stages: the [`experiment`] decides which
//! sites hold atoms and which atoms are lost during the exposure, the
//! [`optics`] stage turns that atom array into an expected photon map
//! through an aberrated point-spread function, and the [`cameras`] stage
//! samples an EMCCD or CMOS readout of that map. Every frame comes with the
//! exact ground truth that produced it. The [`fitting`] module extracts
//! simulator parameters back out of image stacks.
//!
//! [`Generator`] ties the stages together for a [`SimulationConfig`]: frame
//! `k` of a corpus seeded with `s` depends only on the configuration, `s`
//! and `k`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Library version, shared by the command-line tool.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod cameras;
pub mod config;
pub mod experiment;
pub mod field;
pub mod fitting;
pub mod generator;
pub mod io;
pub mod optics;
pub mod sampling;

pub use cameras::ImageU16;
pub use config::{load_config, SimulationConfig};
pub use field::{ComplexField2D, ScalarField2D};
pub use generator::{Frame, GenerateError, Generator};
pub use sampling::RandomState;
