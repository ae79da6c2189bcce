//! Query construction, top-k retrieval over the three indices, evidence
//! aggregation and verification.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignedEntity, Aligner};
use crate::corpus::NewsItem;
use crate::embedding::{EmbeddingVector, Encoder};
use crate::error::{Error, Result};
use crate::extraction::{pair_candidates, Extractor};
use crate::vector_index::{Granularity, Hit, VectorIndex};

pub const DEFAULT_K: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub exclude_self: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: DEFAULT_K,
            exclude_self: true,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("retrieval k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Entities and vectors derived from one news item.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedItem {
    pub aligned: Vec<AlignedEntity>,
    /// `(Z_V, Z_T)` per aligned entity, same order as `aligned`.
    pub entity_vectors: Vec<(EmbeddingVector, EmbeddingVector)>,
    pub event: EmbeddingVector,
}

/// Extract, pair, gate and encode one item.
pub fn encode_item(item: &NewsItem, extractor: &Extractor, aligner: &Aligner, encoder: &Encoder) -> Result<EncodedItem> {
    if item.caption.trim().is_empty() {
        return Err(Error::InvalidInput(format!("item {} has an empty caption", item.id)));
    }
    let visuals = extractor.extract_visual(item)?;
    let textuals = extractor.extract_textual(item)?;
    let aligned = aligner.gate(pair_candidates(&visuals, &textuals), &item.id)?;
    let entity_vectors = aligned.iter().map(|e| encoder.encode_entity(e)).collect::<Result<Vec<_>>>()?;
    let event = encoder.encode_event(&item.caption)?;
    Ok(EncodedItem { aligned, entity_vectors, event })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBundle {
    pub visual_queries: Vec<EmbeddingVector>,
    pub textual_queries: Vec<EmbeddingVector>,
    pub event_query: EmbeddingVector,
}

impl From<EncodedItem> for QueryBundle {
    fn from(enc: EncodedItem) -> Self {
        let (visual_queries, textual_queries) = enc.entity_vectors.into_iter().unzip();
        QueryBundle {
            visual_queries,
            textual_queries,
            event_query: enc.event,
        }
    }
}

pub fn build_queries(item: &NewsItem, extractor: &Extractor, aligner: &Aligner, encoder: &Encoder) -> Result<QueryBundle> {
    encode_item(item, extractor, aligner, encoder).map(QueryBundle::from)
}

/// The three evidence indices.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSet {
    pub visual: VectorIndex,
    pub textual: VectorIndex,
    pub event: VectorIndex,
}

impl IndexSet {
    pub fn get(&self, g: Granularity) -> &VectorIndex {
        match g {
            Granularity::Visual => &self.visual,
            Granularity::Textual => &self.textual,
            Granularity::Event => &self.event,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub visual_hits: Vec<Hit>,
    pub textual_hits: Vec<Hit>,
    pub event_hits: Vec<Hit>,
    pub verified: bool,
}

impl EvidenceSet {
    pub fn hits(&self, g: Granularity) -> &[Hit] {
        match g {
            Granularity::Visual => &self.visual_hits,
            Granularity::Textual => &self.textual_hits,
            Granularity::Event => &self.event_hits,
        }
    }

    pub fn len(&self) -> usize {
        self.visual_hits.len() + self.textual_hits.len() + self.event_hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Nearest distinct sources over every (query, record) pair.
///
/// Each source keeps its closest record; sources are then ordered by
/// distance, ties by record position, and cut to `k`.
pub fn nearest_sources(
    index: &VectorIndex,
    queries: &[EmbeddingVector],
    k: usize,
    exclude_source: Option<&str>,
) -> Result<Vec<Hit>> {
    let mut best: HashMap<&str, (f64, usize)> = HashMap::new();
    for q in queries {
        if index.is_empty() {
            break;
        }
        for (pos, d) in index.distances(q)?.into_iter().enumerate() {
            let rec = index.record(pos).expect("position in range");
            if exclude_source == Some(rec.source_news_id) {
                continue;
            }
            best.entry(rec.source_news_id)
                .and_modify(|cur| {
                    if d.total_cmp(&cur.0).then(pos.cmp(&cur.1)).is_lt() {
                        *cur = (d, pos);
                    }
                })
                .or_insert((d, pos));
        }
    }
    let mut ranked: Vec<(f64, usize)> = best.into_values().collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(k);
    Ok(ranked.into_iter().map(|(d, pos)| index.hit(pos, d)).collect())
}

/// Top-k retrieval per granularity: `(V_r, T_r, E_r)`.
pub fn retrieve(
    bundle: &QueryBundle,
    indices: &IndexSet,
    cfg: &RetrievalConfig,
    self_id: &str,
) -> Result<(Vec<Hit>, Vec<Hit>, Vec<Hit>)> {
    cfg.validate()?;
    let exclude = cfg.exclude_self.then_some(self_id);
    let v = nearest_sources(&indices.visual, &bundle.visual_queries, cfg.k, exclude)?;
    let t = nearest_sources(&indices.textual, &bundle.textual_queries, cfg.k, exclude)?;
    let e = nearest_sources(&indices.event, std::slice::from_ref(&bundle.event_query), cfg.k, exclude)?;
    Ok((v, t, e))
}

pub fn aggregate(visual_hits: Vec<Hit>, textual_hits: Vec<Hit>, event_hits: Vec<Hit>) -> EvidenceSet {
    EvidenceSet {
        visual_hits,
        textual_hits,
        event_hits,
        verified: false,
    }
}

fn clean_list(hits: &[Hit], seen: &mut HashSet<String>) -> Vec<Hit> {
    let mut out: Vec<Hit> = hits
        .iter()
        .filter(|h| !h.payload.trim().is_empty() && h.distance.is_finite() && h.distance >= 0.0)
        .filter(|h| seen.insert(h.record_id.clone()))
        .cloned()
        .collect();
    out.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    let mut sources = HashSet::new();
    out.retain(|h| sources.insert(h.source_news_id.clone()));
    out
}

/// Removes duplicate and malformed hits and marks the set verified.
///
/// Duplicates are keyed by (granularity, record id), first occurrence wins.
/// Hits with an empty payload are dropped. Each list is then ordered by
/// distance and keeps one hit per source.
pub fn verify(e: &EvidenceSet) -> EvidenceSet {
    let mut out = EvidenceSet {
        verified: true,
        ..EvidenceSet::default()
    };
    for g in Granularity::ALL {
        let mut seen = HashSet::new();
        let cleaned = clean_list(e.hits(g), &mut seen);
        match g {
            Granularity::Visual => out.visual_hits = cleaned,
            Granularity::Textual => out.textual_hits = cleaned,
            Granularity::Event => out.event_hits = cleaned,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector_index::IndexRecord;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn hit(id: &str, src: &str, d: f64) -> Hit {
        Hit { record_id: id.into(), source_news_id: src.into(), payload: format!("p-{id}"), distance: d }
    }

    fn line_index(points: &[(&str, &str, f64)]) -> VectorIndex {
        VectorIndex::build(
            Granularity::Visual,
            1,
            points.iter().map(|&(id, src, x)| IndexRecord {
                record_id: id.into(),
                vector: v(&[x]),
                source_news_id: src.into(),
                payload: id.into(),
            }),
        )
        .unwrap()
    }

    #[test]
    fn single_query_two_nearest_distinct_sources() {
        let idx = line_index(&[("a", "s1", 5.0), ("b", "s2", 1.0), ("c", "s2", 1.5), ("d", "s3", 2.0), ("e", "s4", 9.0)]);
        let hits = nearest_sources(&idx, &[v(&[0.0])], 2, None).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.record_id.as_str()).collect();
        assert_eq!(ids, ["b", "d"]);
    }

    #[test]
    fn multi_query_merge_keeps_source_once() {
        let idx = line_index(&[("a", "s1", 0.0), ("b", "s1", 10.0), ("c", "s2", 3.0), ("d", "s3", 12.0)]);
        // Both queries are nearest to source s1; s1 appears once with its smaller distance.
        let hits = nearest_sources(&idx, &[v(&[0.5]), v(&[10.2])], 2, None).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].record_id, "b");
        assert!((hits[0].distance - 0.2).abs() < 1e-12);
        assert_eq!(hits[1].record_id, "d");
    }

    #[test]
    fn self_exclusion() {
        let idx = line_index(&[("me1", "me", 0.0), ("x", "other", 4.0), ("me2", "me", 0.1)]);
        let hits = nearest_sources(&idx, &[v(&[0.0])], 2, Some("me")).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].source_news_id, "other");
    }

    #[test]
    fn empty_queries_and_indices() {
        let idx = line_index(&[("a", "s1", 0.0)]);
        assert!(nearest_sources(&idx, &[], 2, None).unwrap().is_empty());
        let empty = VectorIndex::build(Granularity::Visual, 1, vec![]).unwrap();
        assert!(nearest_sources(&empty, &[v(&[0.0])], 2, None).unwrap().is_empty());
    }

    #[test]
    fn aggregate_sizes() {
        let full = aggregate(vec![hit("a", "1", 0.1), hit("b", "2", 0.2)], vec![hit("c", "3", 0.1), hit("d", "4", 0.3)], vec![hit("e", "5", 0.0), hit("f", "6", 1.0)]);
        assert_eq!(full.len(), 6);
        assert!(!full.verified);
        assert!(aggregate(vec![], vec![], vec![]).is_empty());
        let ev = aggregate(vec![], vec![], vec![hit("e", "5", 0.0)]);
        assert_eq!(ev.event_hits.len(), 1);
        assert!(ev.visual_hits.is_empty() && ev.textual_hits.is_empty());
    }

    #[test]
    fn verify_removes_duplicates_and_empty_payloads() {
        let mut empty = hit("x", "9", 0.05);
        empty.payload = "  ".into();
        let e = aggregate(
            vec![hit("a", "1", 0.1), empty, hit("b", "2", 0.2)],
            vec![],
            vec![hit("e", "5", 0.0), hit("e", "5", 0.0)],
        );
        let out = verify(&e);
        assert!(out.verified);
        assert_eq!(out.event_hits.len(), 1);
        let ids: Vec<_> = out.visual_hits.iter().map(|h| h.record_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(verify(&out), out);
    }

    fn arb_hit() -> impl Strategy<Value = Hit> {
        (0u8..6, 0u8..4, 0u8..5, prop::bool::weighted(0.85)).prop_map(|(id, src, d, has_payload)| Hit {
            record_id: format!("r{id}"),
            source_news_id: format!("s{src}"),
            payload: if has_payload { format!("p{id}") } else { String::new() },
            distance: d as f64 * 0.25,
        })
    }

    proptest! {
        #[test]
        fn verify_idempotent_and_shrinking(
            v in prop::collection::vec(arb_hit(), 0..8),
            t in prop::collection::vec(arb_hit(), 0..8),
            e in prop::collection::vec(arb_hit(), 0..8),
        ) {
            let raw = aggregate(v, t, e);
            let once = verify(&raw);
            prop_assert_eq!(verify(&once), once.clone());
            for g in Granularity::ALL {
                prop_assert!(once.hits(g).len() <= raw.hits(g).len());
                prop_assert!(once.hits(g).windows(2).all(|w| w[0].distance <= w[1].distance));
                let srcs: HashSet<_> = once.hits(g).iter().map(|h| &h.source_news_id).collect();
                prop_assert_eq!(srcs.len(), once.hits(g).len());
            }
        }
    }
}
