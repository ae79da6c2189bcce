//! Out-of-context image/caption detection engine.
//!
//! Items are encoded into visual, textual and event vectors, matched against
//! three exact-search indices, and the verified evidence is handed to a chain
//! of chat-model agents that returns a binary verdict with an explanation.

pub mod agents;
pub mod alignment;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod llm_gateway;
pub mod prompts;
pub mod retrieval;
pub mod rule_mock;
pub mod transport;
pub mod vector_index;

pub use agents::{ablation_rows, PipelineConfig, Verdict};
pub use config::EngineConfig;
pub use corpus::{load_corpus, Category, Corpus, Label, NewsItem};
pub use embedding::EmbeddingVector;
pub use engine::{Detection, Encoders, Engine};
pub use error::{Error, Result};
pub use evaluation::{accuracy_report, average_ranks, error_distribution, EvalReport, RankMatrix};
pub use llm_gateway::{Gateway, GatewayConfig, ProviderConfig};
pub use retrieval::{EvidenceSet, IndexSet};
pub use vector_index::{Granularity, Hit, VectorIndex};
