//! JSON run configuration.

use std::path::Path;

use mfqcka::optimizer::{default_source, SearchSpec};
use mfqcka::{Bundle, ChannelParams, SecurityParams, SourceConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Box constraints of the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bounds {
    pub intensity: [f64; 2],
    pub probability: [f64; 2],
}

impl Default for Bounds {
    fn default() -> Self {
        let spec = SearchSpec::default();
        Bounds {
            intensity: [spec.intensity_bounds.0, spec.intensity_bounds.1],
            probability: [spec.probability_bounds.0, spec.probability_bounds.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub bounds: Bounds,
    pub restarts: usize,
    pub max_evals: usize,
    pub seed: u64,
    pub min_intensity_ratio: f64,
    pub tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let spec = SearchSpec::default();
        OptimizerConfig {
            bounds: Bounds::default(),
            restarts: spec.restarts,
            max_evals: spec.max_evals,
            seed: spec.seed,
            min_intensity_ratio: spec.min_intensity_ratio,
            tolerance: spec.tolerance,
        }
    }
}

impl OptimizerConfig {
    pub fn spec(&self) -> SearchSpec {
        SearchSpec {
            intensity_bounds: (self.bounds.intensity[0], self.bounds.intensity[1]),
            probability_bounds: (self.bounds.probability[0], self.bounds.probability[1]),
            min_intensity_ratio: self.min_intensity_ratio,
            restarts: self.restarts,
            max_evals: self.max_evals,
            tolerance: self.tolerance,
            seed: self.seed,
        }
    }
}

/// Everything a subcommand needs. A missing `source` means three users with
/// the optimizer's default starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub source: Option<SourceConfig>,
    #[serde(default)]
    pub security: SecurityParams,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

impl Config {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config {
                origin: origin.to_string(),
                field: if path == "." {
                    "(top level)".into()
                } else {
                    path
                },
                message: e.into_inner().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            origin: path.display().to_string(),
            field: "(file)".into(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Validated bundle, optionally at another distance.
    pub fn bundle(&self, distance_km: Option<f64>) -> Result<Bundle, CliError> {
        let source = self.source.clone().unwrap_or_else(|| default_source(3, 16));
        let mut channel = self.channel;
        if let Some(d) = distance_km {
            channel.distance_km = d;
        }
        Bundle::validate(source, channel, self.security).map_err(CliError::Validation)
    }

    /// A configuration that reproduces `bundle` exactly.
    pub fn with_bundle(&self, bundle: &Bundle) -> Config {
        Config {
            channel: *bundle.channel(),
            source: Some(bundle.source().clone()),
            security: *bundle.security(),
            optimizer: self.optimizer.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_uses_defaults() {
        let c = Config::parse("{}", "test").unwrap();
        assert_eq!(c.channel, ChannelParams::default());
        assert_eq!(c.security, SecurityParams::default());
        assert_eq!(c.optimizer.spec(), SearchSpec::default());
        assert_eq!(c.bundle(Some(50.0)).unwrap().num_users(), 3);
    }

    #[test]
    fn errors_name_the_field() {
        let text = r#"{"source": {"users": 3, "signal_intensity": "high"}}"#;
        match Config::parse(text, "cfg.json") {
            Err(CliError::Config { field, message, .. }) => {
                assert_eq!(field, "source.signal_intensity");
                assert!(message.contains("line 1"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        match Config::parse(r#"{"optimizer": {"bounds": {"intensty": [0, 1]}}}"#, "x") {
            Err(CliError::Config { field, .. }) => {
                assert!(field.starts_with("optimizer.bounds"), "{field}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_errors_are_forwarded() {
        let text = r#"{"source": {"users": 3, "signal_intensity": 0.2,
            "decoy_intensities": [0.3, 0.1, 0.0],
            "send_probabilities": [0.4, 0.2, 0.2, 0.2], "phase_slices": 16}}"#;
        let c = Config::parse(text, "x").unwrap();
        let err = c.bundle(None).unwrap_err();
        assert!(err.to_string().contains("decoy_intensities"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bundle_round_trips_through_config() {
        let c = Config::parse("{}", "x").unwrap();
        let b = c.bundle(Some(120.0)).unwrap();
        let text = serde_json::to_string(&c.with_bundle(&b)).unwrap();
        let again = Config::parse(&text, "x").unwrap().bundle(None).unwrap();
        assert_eq!(again, b);
    }
}
