//! Project configuration file (TOML). Every key is optional; command-line
//! flags take precedence. Relative paths resolve against the file's directory.

use crate::error::{CliError, Result};
use cbm_core::gmm::GmmConfig;
use cbm_core::iohmm::GemConfig;
use cbm_core::pomdp::PbviConfig;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub costs: Option<PathBuf>,
    pub iohmm: Option<PathBuf>,
    pub gmm: Option<PathBuf>,
    pub pomdp: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden operating states of the IOHMM.
    pub k: Option<usize>,
    /// Observation symbols.
    pub k_gmm: Option<usize>,
    pub gamma: Option<f64>,
    /// Draws per state when estimating the POMDP observation matrix.
    pub z_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub horizon: Option<usize>,
    pub n_runs: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub seed: Option<u64>,
    /// Capacity action labels, in index order.
    pub actions: Option<Vec<String>>,
    pub paths: Paths,
    pub model: ModelSection,
    pub gem: GemConfig,
    pub gmm: GmmConfig,
    pub pbvi: PbviConfig,
    pub sim: SimSection,
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut cfg: ProjectConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.data,
            &mut p.costs,
            &mut p.iohmm,
            &mut p.gmm,
            &mut p.pomdp,
            &mut p.policy,
        ] {
            if let Some(rel) = slot.as_ref().filter(|q| q.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    pub fn gem(&self, seed: u64) -> GemConfig {
        GemConfig {
            seed,
            ..self.gem.clone()
        }
    }

    pub fn gmm(&self, seed: u64) -> GmmConfig {
        GmmConfig {
            seed,
            ..self.gmm.clone()
        }
    }
}

/// The flag value, else the configured value, else a usage error naming the flag.
pub fn require<T: Clone>(flag: Option<T>, configured: &Option<T>, name: &str) -> Result<T> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| CliError::Usage(format!("missing --{name} (or set it in the config file)")))
}
