//! Simulation configuration documents.
//!
//! A document is JSON with a `schema_version`, an `experiment`, an optional
//! `optics` block and a `camera` block tagged by its type:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "experiment": {"sites": [[16, 16]], "scattering_rate": 30000, "exposure_time": 0.08},
//!   "camera": {"emccd": {"width": 32, "height": 32}}
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cameras::{CameraConfig, CameraConfigCMOS, CameraConfigEMCCD, CameraError};
use crate::experiment::{build_site_map, ExperimentConfig, ExperimentError};
use crate::optics::{OpticalConfig, OpticsError};

/// The only document version this build reads.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema_version {found}; this build reads version {SCHEMA_VERSION}")]
    SchemaVersion { found: u32 },
    #[error("invalid `count`: must be at least 1")]
    Count,
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Camera type, used to override the configured camera.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CameraKind {
    Emccd,
    Cmos,
}

impl std::str::FromStr for CameraKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "emccd" => Ok(CameraKind::Emccd),
            "cmos" => Ok(CameraKind::Cmos),
            other => Err(format!("unknown camera `{other}`; expected `emccd` or `cmos`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub schema_version: u32,
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub optics: OpticalConfig,
    pub camera: CameraConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_count")]
    pub count: usize,
    /// Output directory for batch generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_count() -> usize {
    1
}

impl SimulationConfig {
    /// Parses and validates a document. A camera without its own exposure
    /// inherits the experiment's.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let mut config: SimulationConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        config.inherit_exposure();
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration always serializes")
    }

    fn inherit_exposure(&mut self) {
        if self.camera.exposure().is_none() {
            self.camera.set_exposure(self.experiment.exposure_time);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion {
                found: self.schema_version,
            });
        }
        if self.count == 0 {
            return Err(ConfigError::Count);
        }
        self.experiment.validate()?;
        self.optics.validate()?;
        self.camera.validate()?;
        let (w, h) = self.camera.frame_dims();
        build_site_map(&self.experiment, w, h)?;
        Ok(())
    }

    /// Switches to a camera of type `kind`. A camera of the other type is
    /// replaced by that type's defaults at the same frame size and exposure.
    pub fn override_camera(&mut self, kind: CameraKind) {
        let (w, h) = self.camera.frame_dims();
        let exposure = self.camera.exposure();
        self.camera = match (kind, &self.camera) {
            (CameraKind::Emccd, CameraConfig::Emccd(_)) | (CameraKind::Cmos, CameraConfig::Cmos(_)) => return,
            (CameraKind::Emccd, CameraConfig::Cmos(_)) => CameraConfig::Emccd(CameraConfigEMCCD {
                width: w,
                height: h,
                binning: 1,
                exposure,
                ..CameraConfigEMCCD::default()
            }),
            (CameraKind::Cmos, CameraConfig::Emccd(_)) => CameraConfig::Cmos(CameraConfigCMOS {
                width: w,
                height: h,
                exposure,
                ..CameraConfigCMOS::default()
            }),
        };
    }
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<SimulationConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    SimulationConfig::from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "experiment": {"sites": [[4, 5]], "scattering_rate": 30000, "exposure_time": 0.08},
        "camera": {"emccd": {"width": 16, "height": 16}}
    }"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let c = SimulationConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(c.experiment.filling_ratio, 0.5);
        assert_eq!(c.optics, OpticalConfig::default());
        assert_eq!(c.count, 1);
        assert_eq!(c.seed, 0);
        assert_eq!(c.camera.exposure(), Some(0.08));
        match &c.camera {
            CameraConfig::Emccd(e) => assert_eq!(e.em_gain, 300.0),
            _ => panic!("expected an EMCCD"),
        }
        let again = SimulationConfig::from_json_str(&c.to_json_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn out_of_range_filling_names_the_field() {
        let doc = MINIMAL.replace("\"scattering_rate\"", "\"filling_ratio\": 1.2, \"scattering_rate\"");
        let err = SimulationConfig::from_json_str(&doc).unwrap_err();
        assert!(err.to_string().contains("filling_ratio"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let doc = MINIMAL.replace("\"scattering_rate\"", "\"filing_ratio\": 0.5, \"scattering_rate\"");
        let err = SimulationConfig::from_json_str(&doc).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
        assert!(err.to_string().contains("filing_ratio"), "{err}");
    }

    #[test]
    fn both_camera_variants_is_an_error() {
        let doc = MINIMAL.replace(
            r#""camera": {"emccd": {"width": 16, "height": 16}}"#,
            r#""camera": {"emccd": {}, "cmos": {}}"#,
        );
        assert!(matches!(SimulationConfig::from_json_str(&doc), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = SimulationConfig::from_json_str("{\n  \"schema_version\": 1,\n  oops\n}").unwrap_err();
        match err {
            ConfigError::Parse { line, column, .. } => assert_eq!((line, column), (3, 3)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn schema_count_and_site_checks() {
        let v2 = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(SimulationConfig::from_json_str(&v2), Err(ConfigError::SchemaVersion { found: 2 })));
        let zero = MINIMAL.replace("\"schema_version\": 1,", "\"schema_version\": 1, \"count\": 0,");
        assert!(matches!(SimulationConfig::from_json_str(&zero), Err(ConfigError::Count)));
        let outside = MINIMAL.replace("[[4, 5]]", "[[4, 40]]");
        assert!(matches!(
            SimulationConfig::from_json_str(&outside),
            Err(ConfigError::Experiment(ExperimentError::OutOfBounds { .. }))
        ));
    }

    #[test]
    fn explicit_camera_exposure_is_kept() {
        let doc = MINIMAL.replace(r#""width": 16,"#, r#""exposure": 0.2, "width": 16,"#);
        assert_eq!(SimulationConfig::from_json_str(&doc).unwrap().camera.exposure(), Some(0.2));
    }

    #[test]
    fn camera_override_keeps_frame_size() {
        let doc = MINIMAL.replace(r#""height": 16}"#, r#""height": 16, "binning": 2}"#);
        let mut c = SimulationConfig::from_json_str(&doc).unwrap();
        c.override_camera(CameraKind::Emccd);
        assert_eq!(c.camera.kind(), "emccd");
        c.override_camera(CameraKind::Cmos);
        assert_eq!(c.camera.kind(), "cmos");
        assert_eq!(c.camera.frame_dims(), (8, 8));
        assert_eq!(c.camera.exposure(), Some(0.08));
        c.validate().unwrap();
        assert_eq!("cmos".parse::<CameraKind>(), Ok(CameraKind::Cmos));
        assert!("ccd".parse::<CameraKind>().is_err());
    }

    #[test]
    fn load_reports_missing_file() {
        let err = load_config("/nonexistent/config.json").unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, MINIMAL).unwrap();
        assert_eq!(load_config(&path).unwrap().experiment.sites, Some(vec![(4, 5)]));
    }
}
