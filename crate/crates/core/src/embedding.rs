//! Entity and event encoders.
//!
//! `DeterministicMock` turns a canonical input string into a unit vector:
//! for block `b = 0, 1, ...` it computes
//! `SHA-256(seed as u64 LE || b as u32 LE || input UTF-8)`, reads the digest
//! as four little-endian `u64` words, maps each word `w` to
//! `(w >> 11) / 2^53 * 2 - 1` in `[-1, 1)`, takes the first `dim` values and
//! L2-normalizes them.

use std::sync::Arc;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::alignment::AlignedEntity;
use crate::error::{Error, Result};
use crate::extraction::{TextualEntity, VisualEntity};
use crate::transport::JsonTransport;

pub const DEFAULT_MOCK_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("embedding has zero dimensions".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite embedding component {bad}")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Vec<f64> {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    VisualEncoder,
    TextEncoder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderProvider {
    DeterministicMock { seed: u64 },
    Remote { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderProfile {
    pub kind: EncoderKind,
    pub provider: EncoderProvider,
    pub dim: usize,
}

impl EncoderProfile {
    pub fn mock(kind: EncoderKind, seed: u64, dim: usize) -> Self {
        EncoderProfile {
            kind,
            provider: EncoderProvider::DeterministicMock { seed },
            dim,
        }
    }
}

/// Hash-expansion mock encoder; see the module docs for the procedure.
pub fn mock_embed(seed: u64, input: &str, dim: usize) -> Result<EmbeddingVector> {
    if dim == 0 {
        return Err(Error::InvalidInput("dim must be positive".into()));
    }
    let mut values = Vec::with_capacity(dim);
    let mut block: u32 = 0;
    while values.len() < dim {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(block.to_le_bytes());
        hasher.update(input.as_bytes());
        let digest = hasher.finalize();
        for chunk in digest.chunks_exact(8) {
            if values.len() == dim {
                break;
            }
            let word = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            values.push((word >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
        }
        block += 1;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidInput(format!("degenerate mock embedding for {input:?}")));
    }
    values.iter_mut().for_each(|v| *v /= norm);
    EmbeddingVector::new(values)
}

/// Short hex digest of the crop: file content when the handle names a
/// readable file, otherwise the handle text itself.
pub fn crop_digest(crop_ref: &str) -> String {
    let mut hasher = Sha256::new();
    match std::fs::read(crop_ref) {
        Ok(bytes) if !crop_ref.is_empty() => hasher.update(&bytes),
        _ => hasher.update(crop_ref.as_bytes()),
    }
    hex::encode(&hasher.finalize()[..8])
}

pub fn visual_canonical(v: &VisualEntity) -> String {
    format!("class={}|crop={}", v.class_label, crop_digest(&v.crop_ref))
}

pub fn textual_canonical(t: &TextualEntity) -> String {
    format!("surface={}|ner={}", t.surface, t.ner_label)
}

pub struct Encoder {
    visual: EncoderProfile,
    textual: EncoderProfile,
    transport: Arc<dyn JsonTransport>,
}

impl Encoder {
    pub fn new(visual: EncoderProfile, textual: EncoderProfile, transport: Arc<dyn JsonTransport>) -> Result<Self> {
        if visual.kind != EncoderKind::VisualEncoder {
            return Err(Error::Config("visual profile must be a visual_encoder".into()));
        }
        if textual.kind != EncoderKind::TextEncoder {
            return Err(Error::Config("textual profile must be a text_encoder".into()));
        }
        if visual.dim == 0 || textual.dim == 0 {
            return Err(Error::Config("encoder dim must be positive".into()));
        }
        Ok(Encoder { visual, textual, transport })
    }

    pub fn visual_dim(&self) -> usize {
        self.visual.dim
    }

    pub fn textual_dim(&self) -> usize {
        self.textual.dim
    }

    pub fn encode_entity(&self, e: &AlignedEntity) -> Result<(EmbeddingVector, EmbeddingVector)> {
        let v = &e.pair.visual;
        let zv = match &self.visual.provider {
            EncoderProvider::DeterministicMock { seed } => mock_embed(*seed, &visual_canonical(v), self.visual.dim)?,
            EncoderProvider::Remote { endpoint } => {
                let mut body = json!({ "crop_ref": v.crop_ref, "class_label": v.class_label, "dim": self.visual.dim });
                if let Ok(bytes) = std::fs::read(&v.crop_ref) {
                    body["image_b64"] = base64::engine::general_purpose::STANDARD.encode(bytes).into();
                }
                self.remote(endpoint, &body, self.visual.dim)?
            }
        };
        let zt = self.encode_text(&textual_canonical(&e.pair.textual), &e.pair.textual.surface)?;
        Ok((zv, zt))
    }

    pub fn encode_event(&self, caption: &str) -> Result<EmbeddingVector> {
        if caption.trim().is_empty() {
            return Err(Error::InvalidInput("caption is empty".into()));
        }
        self.encode_text(caption, caption)
    }

    fn encode_text(&self, canonical: &str, text: &str) -> Result<EmbeddingVector> {
        match &self.textual.provider {
            EncoderProvider::DeterministicMock { seed } => mock_embed(*seed, canonical, self.textual.dim),
            EncoderProvider::Remote { endpoint } => {
                self.remote(endpoint, &json!({ "text": text, "dim": self.textual.dim }), self.textual.dim)
            }
        }
    }

    fn remote(&self, endpoint: &str, body: &Value, dim: usize) -> Result<EmbeddingVector> {
        let resp = self.transport.post_json(endpoint, body, None)?;
        let list = match resp {
            Value::Object(mut map) => map.remove("vector").unwrap_or(Value::Null),
            other => other,
        };
        let values: Vec<f64> = serde_json::from_value(list)
            .map_err(|e| Error::ProviderUnavailable(format!("{endpoint}: bad vector: {e}")))?;
        if values.len() != dim {
            return Err(Error::DimMismatch { expected: dim, got: values.len() });
        }
        EmbeddingVector::new(values)
    }
}
