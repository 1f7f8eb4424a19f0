//! Optional JSON config files and seed resolution.
//!
//! A config file is a flat JSON object whose keys are the long option names
//! with dashes replaced by underscores (e.g. `{"lr_start": 1e-3}`).
//! Explicit flags always win over config values.

use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;

use crate::CliError;

pub struct Overlay {
    value: serde_json::Value,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> Result<Overlay, CliError> {
        let value = match path {
            None => serde_json::Value::Null,
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                let value: serde_json::Value = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?;
                if !value.is_object() {
                    return Err(CliError::Usage(format!(
                        "config {} must contain a JSON object",
                        p.display()
                    )));
                }
                value
            }
        };
        Ok(Overlay { value })
    }

    /// Flag value if present, otherwise the config value under `key`.
    pub fn get<T: DeserializeOwned>(
        &self,
        flag: Option<T>,
        key: &str,
    ) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.value.get(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key '{key}': {e}"))),
        }
    }

    /// Boolean switch: true if the flag was set or the config enables it.
    pub fn get_switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        if flag {
            return Ok(true);
        }
        Ok(self.get::<bool>(None, key)?.unwrap_or(false))
    }
}

/// Seed precedence: flag, config, HZF_SEED environment variable, 0.
pub fn resolve_seed(flag: Option<u64>, overlay: &Overlay) -> Result<u64, CliError> {
    if let Some(seed) = overlay.get(flag, "seed")? {
        return Ok(seed);
    }
    match std::env::var("HZF_SEED") {
        Ok(text) => text
            .parse::<u64>()
            .map_err(|_| CliError::Usage(format!("HZF_SEED is not a valid u64: '{text}'"))),
        Err(_) => Ok(0),
    }
}
