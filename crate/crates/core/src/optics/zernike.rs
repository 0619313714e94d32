//! Zernike aberration terms of radial degree one to four, piston excluded.
//!
//! Polynomials use Noll's RMS normalization, so each term has unit variance
//! over the unit disk.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::OpticsError;

/// Named aberration term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ZernikeTerm {
    TiltX,
    TiltY,
    Defocus,
    ObliqueAstigmatism,
    VerticalAstigmatism,
    VerticalComa,
    HorizontalComa,
    VerticalTrefoil,
    ObliqueTrefoil,
    PrimarySpherical,
    VerticalSecondaryAstigmatism,
    ObliqueSecondaryAstigmatism,
    VerticalQuadrafoil,
    ObliqueQuadrafoil,
}

impl ZernikeTerm {
    /// Every term, tilts first.
    pub const ALL: [ZernikeTerm; 14] = [
        ZernikeTerm::TiltX,
        ZernikeTerm::TiltY,
        ZernikeTerm::Defocus,
        ZernikeTerm::ObliqueAstigmatism,
        ZernikeTerm::VerticalAstigmatism,
        ZernikeTerm::VerticalComa,
        ZernikeTerm::HorizontalComa,
        ZernikeTerm::VerticalTrefoil,
        ZernikeTerm::ObliqueTrefoil,
        ZernikeTerm::PrimarySpherical,
        ZernikeTerm::VerticalSecondaryAstigmatism,
        ZernikeTerm::ObliqueSecondaryAstigmatism,
        ZernikeTerm::VerticalQuadrafoil,
        ZernikeTerm::ObliqueQuadrafoil,
    ];

    /// The terms that describe a real aberration. Tilt only moves the image.
    pub const PHYSICAL: [ZernikeTerm; 12] = [
        ZernikeTerm::Defocus,
        ZernikeTerm::ObliqueAstigmatism,
        ZernikeTerm::VerticalAstigmatism,
        ZernikeTerm::VerticalComa,
        ZernikeTerm::HorizontalComa,
        ZernikeTerm::VerticalTrefoil,
        ZernikeTerm::ObliqueTrefoil,
        ZernikeTerm::PrimarySpherical,
        ZernikeTerm::VerticalSecondaryAstigmatism,
        ZernikeTerm::ObliqueSecondaryAstigmatism,
        ZernikeTerm::VerticalQuadrafoil,
        ZernikeTerm::ObliqueQuadrafoil,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ZernikeTerm::TiltX => "tilt_x",
            ZernikeTerm::TiltY => "tilt_y",
            ZernikeTerm::Defocus => "defocus",
            ZernikeTerm::ObliqueAstigmatism => "oblique_astigmatism",
            ZernikeTerm::VerticalAstigmatism => "vertical_astigmatism",
            ZernikeTerm::VerticalComa => "vertical_coma",
            ZernikeTerm::HorizontalComa => "horizontal_coma",
            ZernikeTerm::VerticalTrefoil => "vertical_trefoil",
            ZernikeTerm::ObliqueTrefoil => "oblique_trefoil",
            ZernikeTerm::PrimarySpherical => "primary_spherical",
            ZernikeTerm::VerticalSecondaryAstigmatism => "vertical_secondary_astigmatism",
            ZernikeTerm::ObliqueSecondaryAstigmatism => "oblique_secondary_astigmatism",
            ZernikeTerm::VerticalQuadrafoil => "vertical_quadrafoil",
            ZernikeTerm::ObliqueQuadrafoil => "oblique_quadrafoil",
        }
    }

    /// `(n, m)` radial degree and azimuthal frequency; negative `m` selects
    /// the sine branch.
    pub fn degree(self) -> (u32, i32) {
        match self {
            ZernikeTerm::TiltX => (1, 1),
            ZernikeTerm::TiltY => (1, -1),
            ZernikeTerm::Defocus => (2, 0),
            ZernikeTerm::ObliqueAstigmatism => (2, -2),
            ZernikeTerm::VerticalAstigmatism => (2, 2),
            ZernikeTerm::VerticalComa => (3, -1),
            ZernikeTerm::HorizontalComa => (3, 1),
            ZernikeTerm::VerticalTrefoil => (3, -3),
            ZernikeTerm::ObliqueTrefoil => (3, 3),
            ZernikeTerm::PrimarySpherical => (4, 0),
            ZernikeTerm::VerticalSecondaryAstigmatism => (4, 2),
            ZernikeTerm::ObliqueSecondaryAstigmatism => (4, -2),
            ZernikeTerm::VerticalQuadrafoil => (4, 4),
            ZernikeTerm::ObliqueQuadrafoil => (4, -4),
        }
    }

    /// True when the term is unchanged by a half turn of the pupil. Only
    /// these terms survive in an intensity transfer function's magnitude.
    pub fn is_even(self) -> bool {
        self.degree().1 % 2 == 0
    }
}

impl fmt::Display for ZernikeTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ZernikeTerm {
    type Err = OpticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ZernikeTerm::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| OpticsError::UnknownTerm(s.to_string()))
    }
}

/// Value of `term` at polar pupil coordinates.
pub fn zernike_eval(term: ZernikeTerm, rho: f64, theta: f64) -> f64 {
    let r2 = rho * rho;
    let (s8, s10) = (8f64.sqrt(), 10f64.sqrt());
    match term {
        ZernikeTerm::TiltX => 2.0 * rho * theta.cos(),
        ZernikeTerm::TiltY => 2.0 * rho * theta.sin(),
        ZernikeTerm::Defocus => 3f64.sqrt() * (2.0 * r2 - 1.0),
        ZernikeTerm::ObliqueAstigmatism => 6f64.sqrt() * r2 * (2.0 * theta).sin(),
        ZernikeTerm::VerticalAstigmatism => 6f64.sqrt() * r2 * (2.0 * theta).cos(),
        ZernikeTerm::VerticalComa => s8 * (3.0 * r2 - 2.0) * rho * theta.sin(),
        ZernikeTerm::HorizontalComa => s8 * (3.0 * r2 - 2.0) * rho * theta.cos(),
        ZernikeTerm::VerticalTrefoil => s8 * r2 * rho * (3.0 * theta).sin(),
        ZernikeTerm::ObliqueTrefoil => s8 * r2 * rho * (3.0 * theta).cos(),
        ZernikeTerm::PrimarySpherical => 5f64.sqrt() * (6.0 * r2 * r2 - 6.0 * r2 + 1.0),
        ZernikeTerm::VerticalSecondaryAstigmatism => {
            s10 * (4.0 * r2 * r2 - 3.0 * r2) * (2.0 * theta).cos()
        }
        ZernikeTerm::ObliqueSecondaryAstigmatism => {
            s10 * (4.0 * r2 * r2 - 3.0 * r2) * (2.0 * theta).sin()
        }
        ZernikeTerm::VerticalQuadrafoil => s10 * r2 * r2 * (4.0 * theta).cos(),
        ZernikeTerm::ObliqueQuadrafoil => s10 * r2 * r2 * (4.0 * theta).sin(),
    }
}

impl Serialize for ZernikeTerm {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ZernikeTerm {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}

/// Aberration amplitudes, one per named term. Missing entries default to 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZernikeCoefficients {
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub defocus: f64,
    pub oblique_astigmatism: f64,
    pub vertical_astigmatism: f64,
    pub vertical_coma: f64,
    pub horizontal_coma: f64,
    pub vertical_trefoil: f64,
    pub oblique_trefoil: f64,
    pub primary_spherical: f64,
    pub vertical_secondary_astigmatism: f64,
    pub oblique_secondary_astigmatism: f64,
    pub vertical_quadrafoil: f64,
    pub oblique_quadrafoil: f64,
}

impl ZernikeCoefficients {
    pub fn get(&self, term: ZernikeTerm) -> f64 {
        *self.slot(term)
    }

    pub fn set(&mut self, term: ZernikeTerm, value: f64) {
        *self.slot_mut(term) = value;
    }

    pub fn with(mut self, term: ZernikeTerm, value: f64) -> Self {
        self.set(term, value);
        self
    }

    /// Copy with both tilts zeroed.
    pub fn without_tilt(mut self) -> Self {
        self.tilt_x = 0.0;
        self.tilt_y = 0.0;
        self
    }

    /// Weighted sum `Σ cⱼ·Zⱼ(ρ, θ)`.
    pub fn wavefront(&self, rho: f64, theta: f64) -> f64 {
        ZernikeTerm::ALL
            .iter()
            .filter(|t| self.get(**t) != 0.0)
            .map(|t| self.get(*t) * zernike_eval(*t, rho, theta))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ZernikeTerm, f64)> + '_ {
        ZernikeTerm::ALL.iter().map(move |t| (*t, self.get(*t)))
    }

    fn slot(&self, term: ZernikeTerm) -> &f64 {
        match term {
            ZernikeTerm::TiltX => &self.tilt_x,
            ZernikeTerm::TiltY => &self.tilt_y,
            ZernikeTerm::Defocus => &self.defocus,
            ZernikeTerm::ObliqueAstigmatism => &self.oblique_astigmatism,
            ZernikeTerm::VerticalAstigmatism => &self.vertical_astigmatism,
            ZernikeTerm::VerticalComa => &self.vertical_coma,
            ZernikeTerm::HorizontalComa => &self.horizontal_coma,
            ZernikeTerm::VerticalTrefoil => &self.vertical_trefoil,
            ZernikeTerm::ObliqueTrefoil => &self.oblique_trefoil,
            ZernikeTerm::PrimarySpherical => &self.primary_spherical,
            ZernikeTerm::VerticalSecondaryAstigmatism => &self.vertical_secondary_astigmatism,
            ZernikeTerm::ObliqueSecondaryAstigmatism => &self.oblique_secondary_astigmatism,
            ZernikeTerm::VerticalQuadrafoil => &self.vertical_quadrafoil,
            ZernikeTerm::ObliqueQuadrafoil => &self.oblique_quadrafoil,
        }
    }

    fn slot_mut(&mut self, term: ZernikeTerm) -> &mut f64 {
        match term {
            ZernikeTerm::TiltX => &mut self.tilt_x,
            ZernikeTerm::TiltY => &mut self.tilt_y,
            ZernikeTerm::Defocus => &mut self.defocus,
            ZernikeTerm::ObliqueAstigmatism => &mut self.oblique_astigmatism,
            ZernikeTerm::VerticalAstigmatism => &mut self.vertical_astigmatism,
            ZernikeTerm::VerticalComa => &mut self.vertical_coma,
            ZernikeTerm::HorizontalComa => &mut self.horizontal_coma,
            ZernikeTerm::VerticalTrefoil => &mut self.vertical_trefoil,
            ZernikeTerm::ObliqueTrefoil => &mut self.oblique_trefoil,
            ZernikeTerm::PrimarySpherical => &mut self.primary_spherical,
            ZernikeTerm::VerticalSecondaryAstigmatism => &mut self.vertical_secondary_astigmatism,
            ZernikeTerm::ObliqueSecondaryAstigmatism => &mut self.oblique_secondary_astigmatism,
            ZernikeTerm::VerticalQuadrafoil => &mut self.vertical_quadrafoil,
            ZernikeTerm::ObliqueQuadrafoil => &mut self.oblique_quadrafoil,
        }
    }
}
