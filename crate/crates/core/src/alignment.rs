//! Cross-modal alignment scoring and the threshold gate.

use std::collections::BTreeSet;
use std::sync::Arc;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::extraction::EntityPairCandidate;
use crate::transport::JsonTransport;

pub const DEFAULT_TAU: f64 = 0.5;

/// Alignment score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AlignmentScore(f64);

impl AlignmentScore {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(AlignmentScore(value))
        } else {
            Err(Error::MalformedScore(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for AlignmentScore {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        AlignmentScore::new(v)
    }
}

impl From<AlignmentScore> for f64 {
    fn from(s: AlignmentScore) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedEntity {
    pub pair: EntityPairCandidate,
    pub score: AlignmentScore,
    pub source_news_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scorer {
    #[default]
    LexicalOverlap,
    Remote { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub scorer: Scorer,
    pub tau: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            scorer: Scorer::LexicalOverlap,
            tau: DEFAULT_TAU,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        Ok(())
    }
}

fn token_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard similarity of lowercase token sets; 0 when both are empty.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let a = token_set(a);
    let b = token_set(b);
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

pub struct Aligner {
    cfg: AlignmentConfig,
    transport: Arc<dyn JsonTransport>,
}

impl Aligner {
    pub fn new(cfg: AlignmentConfig, transport: Arc<dyn JsonTransport>) -> Result<Self> {
        cfg.validate()?;
        Ok(Aligner { cfg, transport })
    }

    pub fn config(&self) -> &AlignmentConfig {
        &self.cfg
    }

    pub fn score(&self, pair: &EntityPairCandidate) -> Result<AlignmentScore> {
        match &self.cfg.scorer {
            Scorer::LexicalOverlap => AlignmentScore::new(jaccard(&pair.visual.class_label, &pair.textual.surface)),
            Scorer::Remote { endpoint } => {
                let mut body = json!({
                    "crop_ref": pair.visual.crop_ref,
                    "class_label": pair.visual.class_label,
                    "surface": pair.textual.surface,
                });
                if let Ok(bytes) = std::fs::read(&pair.visual.crop_ref) {
                    body["crop_b64"] = base64::engine::general_purpose::STANDARD.encode(bytes).into();
                }
                let resp = self.transport.post_json(endpoint, &body, None)?;
                let value = resp
                    .get("score")
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| Error::ProviderUnavailable(format!("{endpoint}: response lacks numeric score")))?;
                AlignmentScore::new(value)
            }
        }
    }

    /// Scores every candidate and keeps those with `score >= tau`, in order.
    pub fn gate(&self, candidates: Vec<EntityPairCandidate>, source_news_id: &str) -> Result<Vec<AlignedEntity>> {
        let mut scored = Vec::with_capacity(candidates.len());
        for pair in candidates {
            let score = self.score(&pair)?;
            scored.push(AlignedEntity {
                pair,
                score,
                source_news_id: source_news_id.to_string(),
            });
        }
        Ok(retain_at_threshold(scored, self.cfg.tau))
    }
}

/// The gate condition on already-scored entities (inclusive at `tau`).
pub fn retain_at_threshold(entities: Vec<AlignedEntity>, tau: f64) -> Vec<AlignedEntity> {
    entities.into_iter().filter(|e| e.score.value() >= tau).collect()
}
