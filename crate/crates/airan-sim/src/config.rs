//! TOML configuration file mirroring every tunable in the system.
//!
//! All keys are optional and fall back to the documented defaults; unknown
//! keys are rejected so typos fail loudly. The fully resolved configuration
//! is echoed into each run's manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::forecast::ForecasterConfig;
use crate::agent::SacConfig;
use crate::orchestrator::RunConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub forecaster: ForecasterConfig,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub run: RunConfig,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.sac.validate()?;
        self.run.validate()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Default configuration rendered as TOML: the authoritative listing of
/// every key and its default value.
pub fn default_config_toml() -> String {
    toml::to_string_pretty(&ConfigFile::default()).expect("defaults serialize")
}
