//! The declarative run configuration: TOML file, then flag overrides, on top
//! of documented defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shm_kdme_core::detector::DetectorConfig;
use shm_kdme_core::features::EtaGrid;
use shm_kdme_core::persist::{sha256_hex, to_lossless_json};
use shm_kdme_core::synth::DatasetConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// The `η` grid is `eta_step, 2 eta_step, ..., eta_count eta_step`.
    pub eta_step: f64,
    pub eta_count: usize,
    pub segment_seconds: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            eta_step: 0.1,
            eta_count: 100,
            segment_seconds: 60.0,
        }
    }
}

/// Every tunable of a run. Sections mirror the library configs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub features: FeatureConfig,
    pub detector: DetectorConfig,
    pub dataset: DatasetConfig,
}

/// Command-line overrides; `None` leaves the file or default value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    /// Sets both the dataset and the detector seed.
    pub seed: Option<u64>,
    pub q: Option<usize>,
    pub block_window: Option<usize>,
    pub train_hours: Option<f64>,
    pub test_cases: Option<usize>,
    pub null_experiment: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    /// Reads `path`, or the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_toml(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.dataset.seed = seed;
            self.detector.seed = seed;
        }
        if let Some(q) = o.q {
            self.detector.q = q;
        }
        if let Some(w) = o.block_window {
            self.detector.block_window = w;
        }
        if let Some(h) = o.train_hours {
            self.dataset.train_hours = h;
        }
        if let Some(n) = o.test_cases {
            self.dataset.test_cases = n;
        }
        if o.null_experiment {
            self.dataset.null_experiment = true;
        }
    }

    pub fn eta_grid(&self) -> Result<EtaGrid, CliError> {
        Ok(EtaGrid::arithmetic(self.features.eta_step, self.features.eta_count)?)
    }

    /// SHA-256 of the canonical encoding of the effective configuration.
    pub fn sha256(&self) -> String {
        sha256_hex(&to_lossless_json(self).expect("run configuration serializes to JSON"))
    }

    /// Comment block written at the top of every output file.
    pub fn header(&self) -> String {
        format!("shm-kdme {}\nconfig-sha256: {}", env!("CARGO_PKG_VERSION"), self.sha256())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_method() {
        let c = RunConfig::default();
        let grid = c.eta_grid().unwrap();
        assert_eq!(grid.len(), 100);
        assert!((grid.values()[99] - 10.0).abs() < 1e-12);
        assert_eq!(c.features.segment_seconds, 60.0);
        assert_eq!(c.detector.block_window, 30);
        assert_eq!(c.dataset.sample_rate, 100.0);
    }

    #[test]
    fn default_dataset_yields_2880_training_segments() {
        let c = RunConfig::default();
        let per_block = (c.dataset.block_minutes * 60.0 / c.features.segment_seconds) as usize;
        assert_eq!(c.dataset.train_blocks() * per_block, 2880);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = RunConfig::from_toml("[detector]\nq = 2\n[dataset]\ntrain_hours = 3.0\n").unwrap();
        assert_eq!(partial.detector.q, 2);
        assert_eq!(partial.dataset.train_hours, 3.0);
        assert_eq!(partial.features, FeatureConfig::default());
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(CliError::Config(_))));
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = RunConfig::from_toml("[detector]\nq = 2\nseed = 5\n").unwrap();
        let before = c.sha256();
        c.apply(&Overrides {
            seed: Some(9),
            q: Some(3),
            ..Default::default()
        });
        assert_eq!((c.detector.q, c.detector.seed, c.dataset.seed), (3, 9, 9));
        assert_ne!(c.sha256(), before);
        assert_eq!(c.sha256().len(), 64);
    }
}
