use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::ClassifyConfig;
use crate::descriptor::ExtractConfig;
use crate::error::{Error, Result};
use crate::net::NetworkConfig;
use crate::retrieval::DiffusionConfig;
use crate::training::TrainConfig;

/// Architecture of the feature extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// Output channels of each `conv3x3-relu(-pool)` block.
    pub widths: Vec<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            widths: vec![16, 32, 64, 64],
        }
    }
}

impl NetworkSection {
    pub fn network(&self) -> NetworkConfig {
        NetworkConfig::blocks(&self.widths)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    /// Results kept per query.
    pub k: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection { k: 100 }
    }
}

/// Every tunable of a run. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every random substream.
    pub seed: u64,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub extract: ExtractConfig,
    pub search: SearchSection,
    pub diffusion: DiffusionConfig,
    pub classify: ClassifyConfig,
}

fn in_section(section: &str, e: Error) -> Error {
    match e {
        Error::Config { key, reason } => Error::Config {
            key: format!("{section}.{key}"),
            reason,
        },
        other => other,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.network.widths.is_empty() || self.network.widths.contains(&0) {
            return Err(Error::config(
                "network.widths",
                "needs at least one block, all widths positive",
            ));
        }
        self.network
            .network()
            .validate()
            .map_err(|e| in_section("network", e))?;
        self.train.validate().map_err(|e| in_section("train", e))?;
        self.extract
            .validate()
            .map_err(|e| in_section("extract", e))?;
        if self.search.k == 0 {
            return Err(Error::config("search.k", "must be at least 1"));
        }
        self.diffusion
            .validate()
            .map_err(|e| in_section("diffusion", e))?;
        self.classify
            .validate()
            .map_err(|e| in_section("classify", e))?;
        Ok(())
    }

    /// Training settings with the run seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Canonical TOML form; parsing it gives back an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// First eight bytes of the SHA-256 of the canonical form.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }
}

/// Parse and validate a TOML configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let key = message
            .split('`')
            .nth(1)
            .filter(|_| message.starts_with("unknown field"))
            .unwrap_or("<document>")
            .to_string();
        Error::Config {
            key,
            reason: message,
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}
