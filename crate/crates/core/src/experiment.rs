//! Atom sites, occupancy and imaging loss.
//!
//! Produces the ground-truth record for a frame together with the atom
//! array that feeds the optics stage: zero everywhere, one at every atom
//! that survived the exposure, and the surviving fraction of the exposure
//! at every atom that was lost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::ScalarField2D;
use crate::sampling::{sample_loss_time, RandomState, SamplingError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("site ({row}, {col}) lies outside the {width}x{height} camera")]
    OutOfBounds {
        row: i64,
        col: i64,
        width: usize,
        height: usize,
    },
    #[error("duplicate site ({row}, {col})")]
    Duplicate { row: i64, col: i64 },
    #[error("explicit occupancy has {got} entries but there are {expected} sites")]
    OccupancyLength { expected: usize, got: usize },
    #[error("invalid experiment parameter `{field}`: {constraint}")]
    Invalid {
        field: &'static str,
        constraint: &'static str,
    },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// Rectangular lattice of sites, optionally rotated about its centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    /// `(row, col)` of the first site before rotation.
    pub origin: (f64, f64),
    /// Column spacing.
    pub spacing_x: f64,
    /// Row spacing.
    pub spacing_y: f64,
    pub counts_x: usize,
    pub counts_y: usize,
    /// Rotation in radians, counter-clockwise in (col, row) coordinates.
    #[serde(default)]
    pub rotation: f64,
}

impl LatticeSpec {
    /// Expands the lattice, rounding every position to the nearest pixel.
    pub fn positions(&self) -> Vec<(i64, i64)> {
        let centre_x = (self.counts_x.saturating_sub(1)) as f64 * self.spacing_x / 2.0;
        let centre_y = (self.counts_y.saturating_sub(1)) as f64 * self.spacing_y / 2.0;
        let (sin, cos) = self.rotation.sin_cos();
        let mut out = Vec::with_capacity(self.counts_x * self.counts_y);
        for iy in 0..self.counts_y {
            for ix in 0..self.counts_x {
                let dx = ix as f64 * self.spacing_x - centre_x;
                let dy = iy as f64 * self.spacing_y - centre_y;
                let col = self.origin.1 + centre_x + dx * cos - dy * sin;
                let row = self.origin.0 + centre_y + dx * sin + dy * cos;
                out.push((row.round() as i64, col.round() as i64));
            }
        }
        out
    }
}

/// Everything that determines which sites hold atoms and how bright they are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Explicit `(row, col)` camera coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<(i64, i64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSpec>,
    #[serde(default = "default_filling")]
    pub filling_ratio: f64,
    #[serde(default = "default_survival")]
    pub survival_probability: f64,
    /// Photons per second scattered by one atom into the full sphere.
    pub scattering_rate: f64,
    /// Seconds.
    pub exposure_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit_occupancy: Option<Vec<bool>>,
}

fn default_filling() -> f64 {
    0.5
}

fn default_survival() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |field, constraint| Err(ExperimentError::Invalid { field, constraint });
        match (&self.sites, &self.lattice) {
            (Some(_), Some(_)) => return invalid("sites", "give either `sites` or `lattice`, not both"),
            (None, None) => return invalid("sites", "one of `sites` or `lattice` is required"),
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.filling_ratio) {
            return invalid("filling_ratio", "must lie in [0, 1]");
        }
        if !(self.survival_probability > 0.0 && self.survival_probability <= 1.0) {
            return invalid("survival_probability", "must lie in (0, 1]");
        }
        if !(self.scattering_rate >= 0.0 && self.scattering_rate.is_finite()) {
            return invalid("scattering_rate", "must be finite and non-negative");
        }
        if !(self.exposure_time > 0.0 && self.exposure_time.is_finite()) {
            return invalid("exposure_time", "must be positive");
        }
        if let Some(lattice) = &self.lattice {
            if !(lattice.spacing_x.is_finite() && lattice.spacing_y.is_finite()) {
                return invalid("lattice", "spacings must be finite");
            }
        }
        Ok(())
    }
}

/// A site in camera pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub row: usize,
    pub col: usize,
}

/// Resolves the configured sites against a `width × height` camera.
pub fn build_site_map(
    config: &ExperimentConfig,
    width: usize,
    height: usize,
) -> Result<Vec<Site>, ExperimentError> {
    let raw = match (&config.sites, &config.lattice) {
        (Some(list), None) => list.clone(),
        (None, Some(lattice)) => lattice.positions(),
        _ => {
            return Err(ExperimentError::Invalid {
                field: "sites",
                constraint: "exactly one of `sites` or `lattice` is required",
            })
        }
    };
    let mut seen = std::collections::HashSet::with_capacity(raw.len());
    let mut sites = Vec::with_capacity(raw.len());
    for (row, col) in raw {
        if row < 0 || col < 0 || row as usize >= height || col as usize >= width {
            return Err(ExperimentError::OutOfBounds {
                row,
                col,
                width,
                height,
            });
        }
        if !seen.insert((row, col)) {
            return Err(ExperimentError::Duplicate { row, col });
        }
        sites.push(Site {
            row: row as usize,
            col: col as usize,
        });
    }
    if let Some(occ) = &config.explicit_occupancy {
        if occ.len() != sites.len() {
            return Err(ExperimentError::OccupancyLength {
                expected: sites.len(),
                got: occ.len(),
            });
        }
    }
    Ok(sites)
}

/// Per-site label emitted alongside each image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteTruth {
    pub col: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_time: Option<f64>,
    pub lost: bool,
    pub occupied: bool,
    pub row: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub sites: Vec<SiteTruth>,
}

impl GroundTruth {
    pub fn occupied_count(&self) -> usize {
        self.sites.iter().filter(|s| s.occupied).count()
    }

    pub fn lost_count(&self) -> usize {
        self.sites.iter().filter(|s| s.lost).count()
    }

    /// Checks `lost ⇒ occupied` and `loss_time present ⇔ lost`.
    pub fn is_consistent(&self) -> bool {
        self.sites.iter().all(|s| {
            (!s.lost || s.occupied)
                && s.lost == s.loss_time.is_some()
                && s.loss_time.is_none_or(|t| (0.0..=1.0).contains(&t))
        })
    }
}

/// Fills each site with probability `filling_ratio`, or copies the explicit
/// occupancy when one is configured (no random draws in that case).
pub fn sample_occupancy(
    state: &mut RandomState,
    sites: &[Site],
    config: &ExperimentConfig,
) -> GroundTruth {
    let occupied: Vec<bool> = match &config.explicit_occupancy {
        Some(explicit) => explicit.clone(),
        None => sites
            .iter()
            .map(|_| state.uniform() < config.filling_ratio)
            .collect(),
    };
    GroundTruth {
        sites: sites
            .iter()
            .zip(occupied)
            .map(|(site, occupied)| SiteTruth {
                col: site.col,
                loss_time: None,
                lost: false,
                occupied,
                row: site.row,
            })
            .collect(),
    }
}

/// Geometry of the (possibly supersampled) atom array.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AtomGrid {
    /// Camera width in pixels.
    pub width: usize,
    /// Camera height in pixels.
    pub height: usize,
    pub supersampling: usize,
}

impl AtomGrid {
    pub fn new(width: usize, height: usize, supersampling: usize) -> Self {
        assert!(supersampling >= 1);
        Self {
            width,
            height,
            supersampling,
        }
    }

    /// Index in the supersampled array that represents camera pixel `(row, col)`.
    pub fn sub_index(&self, row: usize, col: usize) -> (usize, usize) {
        let s = self.supersampling;
        (row * s + s / 2, col * s + s / 2)
    }

    pub fn zeros(&self) -> ScalarField2D {
        ScalarField2D::zeros(self.width * self.supersampling, self.height * self.supersampling)
    }
}

/// Decides survival of every occupied site and renders the atom array.
///
/// Sites are visited in order; each occupied site consumes one uniform for
/// the survival decision and, when lost, one more for its loss time.
pub fn apply_imaging_loss(
    state: &mut RandomState,
    truth: &GroundTruth,
    survival_probability: f64,
    grid: AtomGrid,
) -> Result<(GroundTruth, ScalarField2D), ExperimentError> {
    let mut out = truth.clone();
    let mut array = grid.zeros();
    for site in &mut out.sites {
        site.lost = false;
        site.loss_time = None;
        if !site.occupied {
            continue;
        }
        let brightness = if state.uniform() < survival_probability {
            1.0
        } else {
            let t = sample_loss_time(state, survival_probability)?;
            site.lost = true;
            site.loss_time = Some(t);
            t
        };
        let (r, c) = grid.sub_index(site.row, site.col);
        array.set(r, c, brightness);
    }
    Ok((out, array))
}

/// Renders the atom array implied by a ground-truth record.
pub fn atom_array(truth: &GroundTruth, grid: AtomGrid) -> ScalarField2D {
    let mut array = grid.zeros();
    for site in truth.sites.iter().filter(|s| s.occupied) {
        let (r, c) = grid.sub_index(site.row, site.col);
        array.set(r, c, site.loss_time.unwrap_or(1.0));
    }
    array
}
