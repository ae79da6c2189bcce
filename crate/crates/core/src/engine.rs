//! Database construction and per-item detection.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{run_agents, PipelineConfig, Verdict};
use crate::alignment::Aligner;
use crate::config::EngineConfig;
use crate::corpus::NewsItem;
use crate::embedding::Encoder;
use crate::error::{Error, Result};
use crate::extraction::Extractor;
use crate::llm_gateway::Gateway;
use crate::prompts::PromptSet;
use crate::retrieval::{aggregate, build_queries, encode_item, retrieve, verify, EvidenceSet, IndexSet};
use crate::transport::{HttpTransport, JsonTransport};
use crate::vector_index::{Granularity, IndexRecord, VectorIndex};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub items: usize,
    pub aligned_entities: usize,
    pub visual_records: usize,
    pub textual_records: usize,
    pub event_records: usize,
}

pub fn index_file_name(g: Granularity) -> String {
    format!("{}.idx", g.as_str())
}

pub fn save_indices(set: &IndexSet, dir: impl AsRef<Path>) -> Result<u64> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = 0;
    for g in Granularity::ALL {
        bytes += set.get(g).save(dir.join(index_file_name(g)))?;
    }
    Ok(bytes)
}

pub fn load_indices(dir: impl AsRef<Path>) -> Result<IndexSet> {
    let dir = dir.as_ref();
    let load = |g: Granularity| -> Result<VectorIndex> {
        let idx = VectorIndex::load(dir.join(index_file_name(g)))?;
        if idx.granularity() != g {
            return Err(Error::CorruptIndex(format!("{} holds a {} index", index_file_name(g), idx.granularity().as_str())));
        }
        Ok(idx)
    };
    Ok(IndexSet { visual: load(Granularity::Visual)?, textual: load(Granularity::Textual)?, event: load(Granularity::Event)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub verdict: Verdict,
    /// `None` when the config uses no evidence and retrieval was skipped.
    pub evidence: Option<EvidenceSet>,
}

/// Extraction, alignment and encoding components.
pub struct Encoders {
    pub extractor: Extractor,
    pub aligner: Aligner,
    pub encoder: Encoder,
}

impl Encoders {
    pub fn from_config(cfg: &EngineConfig, transport: Arc<dyn JsonTransport>) -> Result<Self> {
        Ok(Encoders {
            extractor: Extractor::new(cfg.extraction.clone(), transport.clone())?,
            aligner: Aligner::new(cfg.alignment.clone(), transport.clone())?,
            encoder: Encoder::new(cfg.embedding.visual.clone(), cfg.embedding.textual.clone(), transport)?,
        })
    }

    /// Builds the three indices over `items`.
    ///
    /// Record ids are `<id>#v<n>`, `<id>#t<n>` and `<id>#e`. Payloads are the
    /// class label, the entity surface and the caption respectively.
    pub fn build_database(&self, items: &[NewsItem]) -> Result<(IndexSet, BuildReport)> {
        let mut seen = std::collections::HashSet::new();
        let (mut vis, mut txt, mut ev) = (Vec::new(), Vec::new(), Vec::new());
        let mut report = BuildReport { items: items.len(), ..BuildReport::default() };
        for item in items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::DuplicateId(item.id.clone()));
            }
            let enc = encode_item(item, &self.extractor, &self.aligner, &self.encoder)?;
            report.aligned_entities += enc.aligned.len();
            for (n, (aligned, (zv, zt))) in enc.aligned.iter().zip(enc.entity_vectors).enumerate() {
                vis.push(IndexRecord {
                    record_id: format!("{}#v{n}", item.id),
                    vector: zv,
                    source_news_id: item.id.clone(),
                    payload: aligned.pair.visual.class_label.clone(),
                });
                txt.push(IndexRecord {
                    record_id: format!("{}#t{n}", item.id),
                    vector: zt,
                    source_news_id: item.id.clone(),
                    payload: aligned.pair.textual.surface.clone(),
                });
            }
            ev.push(IndexRecord {
                record_id: format!("{}#e", item.id),
                vector: enc.event,
                source_news_id: item.id.clone(),
                payload: item.caption.clone(),
            });
        }
        report.visual_records = vis.len();
        report.textual_records = txt.len();
        report.event_records = ev.len();
        let set = IndexSet {
            visual: VectorIndex::build(Granularity::Visual, self.encoder.visual_dim(), vis)?,
            textual: VectorIndex::build(Granularity::Textual, self.encoder.textual_dim(), txt)?,
            event: VectorIndex::build(Granularity::Event, self.encoder.textual_dim(), ev)?,
        };
        tracing::info!(?report, "database built");
        Ok((set, report))
    }
}

/// Retrieval plus agents over a fixed database.
pub struct Engine {
    pub config: EngineConfig,
    pub encoders: Encoders,
    pub indices: IndexSet,
    pub gateway: Gateway,
    pub prompts: PromptSet,
}

impl Engine {
    pub fn new(config: EngineConfig, indices: IndexSet) -> Result<Self> {
        let transport: Arc<dyn JsonTransport> = Arc::new(HttpTransport::default());
        let gateway = Gateway::with_transport(config.gateway.clone(), transport.clone())?;
        Engine::with_parts(config, indices, gateway, transport)
    }

    pub fn with_parts(config: EngineConfig, indices: IndexSet, gateway: Gateway, transport: Arc<dyn JsonTransport>) -> Result<Self> {
        config.validate()?;
        Ok(Engine {
            encoders: Encoders::from_config(&config, transport)?,
            prompts: PromptSet::from_config(&config.prompts)?,
            config,
            indices,
            gateway,
        })
    }

    pub fn retrieve_evidence(&self, item: &NewsItem) -> Result<EvidenceSet> {
        let e = &self.encoders;
        let bundle = build_queries(item, &e.extractor, &e.aligner, &e.encoder)?;
        let (v, t, ev) = retrieve(&bundle, &self.indices, &self.config.retrieval, &item.id)?;
        Ok(verify(&aggregate(v, t, ev)))
    }

    pub fn detect(&self, item: &NewsItem) -> Result<Detection> {
        self.detect_with(item, &self.config.pipeline)
    }

    pub fn detect_with(&self, item: &NewsItem, pipeline: &PipelineConfig) -> Result<Detection> {
        let evidence = if pipeline.uses_evidence() { Some(self.retrieve_evidence(item)?) } else { None };
        let verdict = run_agents(item, evidence.as_ref(), pipeline, &self.gateway, &self.prompts)?;
        Ok(Detection { verdict, evidence })
    }
}
