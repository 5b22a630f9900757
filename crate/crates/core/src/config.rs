//! Audit configuration: one TOML file with provider, audit and path
//! sections. Command-line flags override the file, which overrides the
//! defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimatorConfig, UnitPolicy};
use crate::sampler::ProviderConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    /// Samples per question.
    pub repetitions: u32,
    pub ci_level: f64,
    /// Center of the rescaled 1..11 left-right axis.
    pub center: f64,
    /// "round" or "mode".
    pub unit_policy: String,
    /// Fail instead of using the nearest-mean fallback when no interval
    /// contains the unit value.
    pub strict_match: bool,
    pub min_cell_n: usize,
    /// Mandatory for `simulate`; also seeds retry jitter.
    pub seed: Option<u64>,
    /// Heteroskedasticity correction for regressions: 0 or 1.
    pub hc: u8,
}

impl Default for AuditSection {
    fn default() -> AuditSection {
        AuditSection {
            repetitions: 30,
            ci_level: 0.95,
            center: 6.0,
            unit_policy: "round".to_string(),
            strict_match: false,
            min_cell_n: 30,
            seed: None,
            hc: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Questionnaire TOML; absent means the built-in battery.
    pub questionnaire: Option<PathBuf>,
    /// Respondent CSV.
    pub dataset: Option<PathBuf>,
    /// JSONL run store.
    pub run_store: Option<PathBuf>,
    /// Region-map TOML; absent means the built-in 32-country map.
    pub region_map: Option<PathBuf>,
    /// Output directory.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub provider: ProviderConfig,
    pub audit: AuditSection,
    pub paths: PathsSection,
}

impl AuditConfig {
    pub fn from_toml(text: &str) -> Result<AuditConfig, ConfigError> {
        let cfg: AuditConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.audit.repetitions == 0 {
            return Err(ConfigError::Invalid("repetitions must be >= 1".into()));
        }
        if !(self.audit.ci_level > 0.0 && self.audit.ci_level < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "ci_level must lie in (0, 1), got {}",
                self.audit.ci_level
            )));
        }
        if self.unit_policy().is_none() {
            return Err(ConfigError::Invalid(format!(
                "unit_policy must be \"round\" or \"mode\", got \"{}\"",
                self.audit.unit_policy
            )));
        }
        if self.audit.hc > 1 {
            return Err(ConfigError::Invalid(format!(
                "hc must be 0 or 1, got {}",
                self.audit.hc
            )));
        }
        Ok(())
    }

    pub fn unit_policy(&self) -> Option<UnitPolicy> {
        UnitPolicy::parse(&self.audit.unit_policy)
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            min_cell_n: self.audit.min_cell_n,
            ci_level: self.audit.ci_level,
            center: self.audit.center,
            unit_policy: self.unit_policy().expect("validated"),
            strict_match: self.audit.strict_match,
        }
    }
}
