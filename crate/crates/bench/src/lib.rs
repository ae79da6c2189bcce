//! Synthetic inputs shared by the benchmarks.

use ooc_core::embedding::mock_embed;
use ooc_core::vector_index::{Granularity, IndexRecord, VectorIndex};
use ooc_core::EmbeddingVector;

/// Entity records in the evidence database.
pub const ENTITY_RECORDS: usize = 18_305;
/// Event records in the evidence database.
pub const EVENT_RECORDS: usize = 71_072;
pub const DIM: usize = 64;

pub fn synthetic_index(granularity: Granularity, n: usize) -> VectorIndex {
    let records = (0..n).map(|i| IndexRecord {
        record_id: format!("r{i}"),
        vector: mock_embed(3, &format!("record {i}"), DIM).expect("mock vector"),
        source_news_id: format!("n{}", i / 4),
        payload: String::new(),
    });
    VectorIndex::build(granularity, DIM, records).expect("index")
}

pub fn query(i: usize) -> EmbeddingVector {
    mock_embed(5, &format!("query {i}"), DIM).expect("mock vector")
}
