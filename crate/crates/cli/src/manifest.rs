//! Run manifests: the fully resolved configuration of a command plus its
//! results. A manifest is also accepted back through `--config`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest<C, R> {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: C,
    pub results: R,
}

impl<C: Serialize, R: Serialize> Manifest<C, R> {
    pub fn new(command: &str, seed: u64, config: C, results: R) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            results,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        snrflow::io::write_json(&dir.join(MANIFEST_FILE), self)?;
        Ok(())
    }
}

/// Configuration loaded from `--config`: either a bare config object or a
/// manifest written by the same command, in which case its seed comes too.
pub struct Loaded<C> {
    pub config: C,
    pub seed: Option<u64>,
}

pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<Loaded<C>> {
    let Some(path) = path else {
        return Ok(Loaded { config: C::default(), seed: None });
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let (config, seed) = match value.get("command") {
        Some(cmd) => {
            if cmd.as_str() != Some(command) {
                bail!("{} is a manifest for '{}', not '{command}'", path.display(), cmd);
            }
            let seed = value.get("seed").and_then(Value::as_u64);
            let config = value.get("config").cloned().unwrap_or(Value::Null);
            (config, seed)
        }
        None => (value, None),
    };
    let config = serde_json::from_value(config).with_context(|| format!("invalid {command} config in {}", path.display()))?;
    Ok(Loaded { config, seed })
}
