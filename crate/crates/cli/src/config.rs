//! The TOML configuration file shared by every subcommand.
//!
//! ```toml
//! [policy]        # model dimensions used by `init`
//! [supervised]    # trainer settings of `init`
//! [deployment]    # rounds, interactions, variant, seeds
//! [deployment.trainer]
//! [deployment.trainer.rewards.ans]
//! [deployment.oracle]
//! [service]       # `serve` settings; its own [service.trainer] drives advances
//! ```
//!
//! Every section and key is optional, except that an overridden reward
//! triple lists all three of `correct`, `partially_correct` and `wrong`.
//! Unknown keys are all reported at once.

use std::path::Path;

use serde::{Deserialize, Serialize};

use banditqa_core::{DeploymentConfig, PolicyDims, TrainerConfig};
use banditqa_service::ServiceConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub policy: PolicyDims,
    pub supervised: TrainerConfig,
    pub deployment: DeploymentConfig,
    pub service: ServiceConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            policy: PolicyDims::default(),
            supervised: TrainerConfig::supervised(),
            deployment: DeploymentConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

/// Tables whose keys depend on a tag and are checked by deserialization.
const OPAQUE: &[&str] = &["noise_model"];

fn unknown_keys(given: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (known.get(k), v) {
            (None, _) => out.push(path),
            (Some(toml::Value::Table(kt)), toml::Value::Table(gt)) if !OPAQUE.contains(&k.as_str()) => {
                unknown_keys(gt, kt, &path, out)
            }
            _ => {}
        }
    }
}

impl Config {
    pub fn parse(raw: &str) -> Result<Self, CliError> {
        let given: toml::Table = raw.parse().map_err(|e| CliError::Input(format!("config is not valid TOML: {e}")))?;
        let known = toml::Table::try_from(Config::default()).map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&given, &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(CliError::Input(format!("unknown config keys: {}", unknown.join(", "))));
        }
        let cfg: Config =
            toml::from_str(raw).map_err(|e| CliError::Input(format!("invalid config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&raw).map_err(|e| match e {
            CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.policy.validate()?;
        self.supervised.validate()?;
        self.deployment.validate()?;
        self.service.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))
    }
}
