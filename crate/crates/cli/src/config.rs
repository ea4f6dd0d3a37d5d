//! Run configuration file: TOML with optional `[hyper]`, `[chain]` and
//! `[proposal]` tables whose keys mirror the library structs. Unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svgene_core::{ChainConfig, HyperParams, ProposalScales};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Syntax { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hyper: HyperParams,
    pub chain: ChainConfig,
    pub proposal: ProposalScales,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|msg| ConfigError::Syntax {
            path: path.to_path_buf(),
            msg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_tables_keep_defaults() {
        let cfg = RunConfig::from_toml("[hyper]\nbfdr_level = 0.1\n[chain]\niterations = 50\nburn_in = 10\n").unwrap();
        assert_eq!(cfg.hyper.bfdr_level, 0.1);
        assert_eq!(cfg.hyper.a_gamma, HyperParams::default().a_gamma);
        assert_eq!((cfg.chain.iterations, cfg.chain.burn_in), (50, 10));
        assert_eq!(cfg.proposal, ProposalScales::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[hyper]\nbfdr = 0.1\n").is_err());
        assert!(RunConfig::from_toml("[sampler]\n").is_err());
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }
}
