//! Run configuration: a TOML file with optional `[gimm]`, `[train]`,
//! `[vfi]` and `[vfi_train]` tables, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GimmError, Result};
use crate::model::GimmConfig;
use crate::synthesis::{vfi_train_defaults, VfiConfig};
use crate::train::TrainConfig;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "GIMM_OUT";
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

fn default_vfi_train() -> TrainConfig {
    vfi_train_defaults()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub gimm: GimmConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub vfi: VfiConfig,
    #[serde(default = "default_vfi_train")]
    pub vfi_train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: None,
            gimm: GimmConfig::default(),
            train: TrainConfig::default(),
            vfi: VfiConfig::default(),
            vfi_train: vfi_train_defaults(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GimmError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GimmError::io(path, e))?;
        Self::parse(&text).map_err(|e| GimmError::Config(format!("{}: {e}", path.display())))
    }

    /// The file at `path`, or defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.gimm.validate()?;
        self.train.validate()?;
        self.vfi.validate()?;
        self.vfi_train.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, self.to_toml()).map_err(|e| GimmError::io(path, e))
    }
}

/// Output directory precedence: flag, config file, `$GIMM_OUT/<command>`,
/// then `runs/<command>`.
pub fn resolve_output(flag: Option<&Path>, config: &RunConfig, command: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &config.output_dir {
        return p.clone();
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
        _ => PathBuf::from("runs").join(command),
    }
}
