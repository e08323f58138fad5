use std::path::Path;

use kernlab::decoder::DecoderConfig;
use kernlab::flops::{AggregatorCostConfig, AttentionCostConfig};
use kernlab::verify::Tolerances;
use kernlab::DType;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable consulted when no seed is given on the command line
/// or in the config file.
pub const SEED_ENV: &str = "YOSO_SEED";

/// One JSON document configuring every command. All sections are optional;
/// unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub aggregator: AggregatorCostConfig,
    pub decoder: DecoderConfig,
    pub seed: Option<u64>,
    pub dtype: DType,
    pub tolerances: Tolerances,
    /// Stuff class ids for demo output; defaults to the upper half of the
    /// class range.
    pub stuff: Option<Vec<u32>>,
    /// Confidence threshold used when merging predictions.
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            aggregator: AggregatorCostConfig::default(),
            decoder: DecoderConfig::default(),
            seed: None,
            dtype: DType::F64,
            tolerances: Tolerances::default(),
            stuff: None,
            threshold: kernlab::panoptic::DEFAULT_THRESHOLD,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.aggregator.validate().map_err(|e| e.to_string())?;
        self.decoder.validate().map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(format!("threshold {} outside [0, 1]", self.threshold));
        }
        Ok(())
    }

    pub fn attention(&self) -> AttentionCostConfig {
        AttentionCostConfig {
            n: self.decoder.n,
            d: self.decoder.d,
            t: self.decoder.t,
        }
    }

    pub fn stuff_ids(&self) -> Vec<u32> {
        let l = self.decoder.classes as u32;
        self.stuff.clone().unwrap_or_else(|| (l / 2..l).collect())
    }

    /// Seed precedence: command-line flag, config file, `YOSO_SEED`, then 0.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::parse("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        assert!(RunConfig::parse(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::parse(r#"{"decoder": {"bogus": 1}}"#).is_err());
        assert!(RunConfig::parse(r#"{"tolerances": {"bogus": 1}}"#).is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::parse(
            r#"{"seed": 9, "dtype": "f32", "decoder": {"n": 10, "d": 32, "heads": 4, "classes": 5},
                "tolerances": {"equivalence_f32": 2e-5}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.dtype, DType::F32);
        assert_eq!(cfg.decoder.n, 10);
        assert_eq!(cfg.tolerances.equivalence_f32, 2e-5);
        assert_eq!(cfg.stuff_ids(), [2, 3, 4]);
        assert_eq!(cfg.resolve_seed(Some(1)).unwrap(), 1);
        assert_eq!(cfg.resolve_seed(None).unwrap(), 9);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse(r#"{"decoder": {"t": 4}}"#).is_err());
        assert!(RunConfig::parse(r#"{"threshold": 1.5}"#).is_err());
        assert!(RunConfig::parse(r#"{"dtype": "f16"}"#).is_err());
    }
}
