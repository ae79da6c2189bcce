//! Engine configuration, loaded from TOML.
//!
//! Every section is optional; missing fields take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::PipelineConfig;
use crate::alignment::AlignmentConfig;
use crate::embedding::{EncoderKind, EncoderProfile};
use crate::error::{Error, Result};
use crate::extraction::ExtractorConfig;
use crate::llm_gateway::GatewayConfig;
use crate::prompts::PromptConfig;
use crate::retrieval::RetrievalConfig;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub visual: EncoderProfile,
    pub textual: EncoderProfile,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            visual: EncoderProfile::mock(EncoderKind::VisualEncoder, DEFAULT_SEED, DEFAULT_DIM),
            textual: EncoderProfile::mock(EncoderKind::TextEncoder, DEFAULT_SEED, DEFAULT_DIM),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EngineConfig {
    pub extraction: ExtractorConfig,
    pub alignment: AlignmentConfig,
    pub embedding: EmbeddingConfig,
    pub retrieval: RetrievalConfig,
    pub gateway: GatewayConfig,
    pub pipeline: PipelineConfig,
    pub prompts: PromptConfig,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EngineConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.extraction.validate()?;
        self.alignment.validate()?;
        self.retrieval.validate()?;
        self.gateway.validate()?;
        if self.embedding.visual.dim == 0 || self.embedding.textual.dim == 0 {
            return Err(Error::Config("embedding dim must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::ProviderConfig;

    #[test]
    fn empty_toml_is_default() {
        assert_eq!(EngineConfig::from_toml("").unwrap(), EngineConfig::default());
    }

    #[test]
    fn partial_sections() {
        let cfg = EngineConfig::from_toml(
            "[alignment]\ntau = 0.7\n[retrieval]\nk = 3\n[gateway.provider]\nkind = \"scripted_mock\"\nscript_path = \"s.json\"\n",
        )
        .unwrap();
        assert_eq!(cfg.alignment.tau, 0.7);
        assert_eq!(cfg.retrieval.k, 3);
        assert!(matches!(cfg.gateway.provider, ProviderConfig::ScriptedMock { .. }));
        assert!(cfg.retrieval.exclude_self);
    }

    #[test]
    fn round_trip() {
        let cfg = EngineConfig::default();
        assert_eq!(EngineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(EngineConfig::from_toml("[alignment]\ntau = 1.5\n").is_err());
        assert!(EngineConfig::from_toml("[retrieval]\nk = 0\n").is_err());
        assert!(EngineConfig::from_toml("[nope\n").is_err());
    }
}
