//! Visual and textual entity extraction behind pluggable providers.
//!
//! Real detector and NER models run as remote services. The `sidecar`
//! providers read entities shipped with the record and the `rule_based`
//! textual provider is a capitalized-run heuristic; both are pure functions
//! of the item.

use std::sync::Arc;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use crate::corpus::NewsItem;
use crate::error::{Error, Result};
use crate::transport::JsonTransport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualEntity {
    pub entity_id: String,
    pub class_label: String,
    pub region: BoundingBox,
    /// Opaque handle to the cropped image bytes.
    #[serde(default)]
    pub crop_ref: String,
    pub confidence: f64,
}

impl VisualEntity {
    pub fn is_valid(&self) -> bool {
        self.region.w > 0.0
            && self.region.h > 0.0
            && (0.0..=1.0).contains(&self.confidence)
            && !self.class_label.trim().is_empty()
    }
}

/// Half-open character range `[start, end)` into the caption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextualEntity {
    pub entity_id: String,
    pub surface: String,
    pub span: Span,
    pub ner_label: String,
}

impl TextualEntity {
    /// Checks the span lies inside `caption` and selects exactly `surface`.
    pub fn matches_caption(&self, caption: &str) -> bool {
        if self.span.is_empty() {
            return false;
        }
        char_slice(caption, self.span).is_some_and(|s| s == self.surface)
    }
}

/// Slices `text` by character offsets.
pub fn char_slice(text: &str, span: Span) -> Option<&str> {
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let start = indices.nth(span.start)?;
    let end = if span.end == span.start {
        start
    } else {
        indices.nth(span.end - span.start - 1)?
    };
    Some(&text[start..end])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityPairCandidate {
    pub visual: VisualEntity,
    pub textual: TextualEntity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisualProvider {
    #[default]
    Sidecar,
    Remote { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextualProvider {
    Sidecar,
    #[default]
    RuleBased,
    Remote { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub visual_provider: VisualProvider,
    pub textual_provider: TextualProvider,
    pub min_confidence: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            visual_provider: VisualProvider::Sidecar,
            textual_provider: TextualProvider::RuleBased,
            min_confidence: 0.0,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::Config(format!(
                "min_confidence {} outside [0, 1]",
                self.min_confidence
            )));
        }
        Ok(())
    }
}

pub struct Extractor {
    cfg: ExtractorConfig,
    transport: Arc<dyn JsonTransport>,
}

impl Extractor {
    pub fn new(cfg: ExtractorConfig, transport: Arc<dyn JsonTransport>) -> Result<Self> {
        cfg.validate()?;
        Ok(Extractor { cfg, transport })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.cfg
    }

    pub fn extract_visual(&self, item: &NewsItem) -> Result<Vec<VisualEntity>> {
        let raw = match &self.cfg.visual_provider {
            VisualProvider::Sidecar => item
                .pre_extracted
                .as_ref()
                .map(|p| p.visual_entities.clone())
                .unwrap_or_default(),
            VisualProvider::Remote { endpoint } => {
                let body = image_request(&item.image_ref)?;
                let resp = self.transport.post_json(endpoint, &body, None)?;
                decode_entity_list(resp, endpoint)?
            }
        };
        Ok(raw
            .into_iter()
            .filter(|e| {
                let ok = e.is_valid();
                if !ok {
                    warn!(item = %item.id, entity = %e.entity_id, "rejecting invalid visual entity");
                }
                ok
            })
            .filter(|e| e.confidence >= self.cfg.min_confidence)
            .collect())
    }

    pub fn extract_textual(&self, item: &NewsItem) -> Result<Vec<TextualEntity>> {
        if item.caption.trim().is_empty() {
            return Err(Error::InvalidInput("caption is empty".into()));
        }
        let raw = match &self.cfg.textual_provider {
            TextualProvider::Sidecar => item
                .pre_extracted
                .as_ref()
                .map(|p| p.textual_entities.clone())
                .unwrap_or_default(),
            TextualProvider::RuleBased => rule_based_entities(&item.caption),
            TextualProvider::Remote { endpoint } => {
                let body = json!({ "caption": item.caption });
                let resp = self.transport.post_json(endpoint, &body, None)?;
                decode_entity_list(resp, endpoint)?
            }
        };
        let valid = raw
            .into_iter()
            .filter(|e| {
                let ok = e.matches_caption(&item.caption);
                if !ok {
                    warn!(item = %item.id, entity = %e.entity_id, "rejecting textual entity with bad span");
                }
                ok
            })
            .collect();
        Ok(resolve_overlaps(valid))
    }
}

fn image_request(image_ref: &str) -> Result<Value> {
    if image_ref.starts_with("http://") || image_ref.starts_with("https://") {
        return Ok(json!({ "image_url": image_ref }));
    }
    let bytes = std::fs::read(image_ref).map_err(|e| Error::ImageUnreadable(format!("{image_ref}: {e}")))?;
    Ok(json!({
        "image_ref": image_ref,
        "image_b64": base64::engine::general_purpose::STANDARD.encode(bytes),
    }))
}

/// Accepts either a bare JSON array or `{"entities": [...]}`.
fn decode_entity_list<T: for<'de> Deserialize<'de>>(resp: Value, endpoint: &str) -> Result<Vec<T>> {
    let list = match resp {
        Value::Object(mut map) => map.remove("entities").unwrap_or(Value::Null),
        other => other,
    };
    let items = match list {
        Value::Array(items) => items,
        _ => {
            return Err(Error::ProviderUnavailable(format!(
                "{endpoint}: response is not an entity list"
            )))
        }
    };
    // Entities that fail to decode are dropped individually.
    Ok(items
        .into_iter()
        .filter_map(|v| match serde_json::from_value(v) {
            Ok(e) => Some(e),
            Err(err) => {
                warn!(%endpoint, %err, "dropping undecodable entity");
                None
            }
        })
        .collect())
}

/// Keeps a non-overlapping subset: longer spans win, then earlier starts.
/// Output is ordered by span start.
pub fn resolve_overlaps(mut entities: Vec<TextualEntity>) -> Vec<TextualEntity> {
    entities.sort_by(|a, b| {
        b.span
            .len()
            .cmp(&a.span.len())
            .then(a.span.start.cmp(&b.span.start))
    });
    let mut kept: Vec<TextualEntity> = Vec::with_capacity(entities.len());
    for e in entities {
        if kept.iter().all(|k| !k.span.overlaps(&e.span)) {
            kept.push(e);
        }
    }
    kept.sort_by_key(|e| e.span.start);
    kept
}

struct Token {
    start: usize,
    end: usize,
    capitalized: bool,
    sentence_start: bool,
    breaks_before: bool,
    breaks_after: bool,
}

fn tokenize(caption: &str) -> Vec<Token> {
    let chars: Vec<char> = caption.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut next_is_sentence_start = true;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let raw_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let raw_end = i;
        let mut start = raw_start;
        let mut end = raw_end;
        while start < end && !chars[start].is_alphanumeric() {
            start += 1;
        }
        while end > start && !chars[end - 1].is_alphanumeric() {
            end -= 1;
        }
        let trailing: String = chars[end..raw_end].iter().collect();
        let sentence_start = next_is_sentence_start;
        next_is_sentence_start = trailing.contains(['.', '!', '?']);
        if start == end {
            // Pure punctuation token: breaks any run in progress.
            tokens.push(Token {
                start,
                end,
                capitalized: false,
                sentence_start,
                breaks_before: true,
                breaks_after: true,
            });
            continue;
        }
        tokens.push(Token {
            start,
            end,
            capitalized: chars[start].is_uppercase(),
            sentence_start,
            breaks_before: start != raw_start,
            breaks_after: !trailing.is_empty(),
        });
    }
    tokens
}

/// Capitalized-run NER stand-in.
///
/// Emits maximal runs of capitalized tokens, labeled `ENT`. Punctuation
/// attached to a token ends the run. A run made only of the single
/// capitalized word opening a sentence is ordinary sentence casing and is
/// skipped.
pub fn rule_based_entities(caption: &str) -> Vec<TextualEntity> {
    let tokens = tokenize(caption);
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for (idx, tok) in tokens.iter().enumerate() {
        if tok.breaks_before {
            runs.extend(current.take());
        }
        if tok.capitalized {
            let run = current.get_or_insert((idx, idx));
            run.1 = idx;
            if tok.breaks_after {
                runs.extend(current.take());
            }
        } else {
            runs.extend(current.take());
        }
    }
    runs.extend(current.take());

    runs.into_iter()
        .filter(|&(first, last)| !(first == last && tokens[first].sentence_start))
        .enumerate()
        .map(|(n, (first, last))| {
            let span = Span {
                start: tokens[first].start,
                end: tokens[last].end,
            };
            TextualEntity {
                entity_id: format!("t{n}"),
                surface: char_slice(caption, span).unwrap_or_default().to_string(),
                span,
                ner_label: "ENT".to_string(),
            }
        })
        .collect()
}

/// Every (visual, textual) pair, visual-major.
pub fn pair_candidates(visuals: &[VisualEntity], textuals: &[TextualEntity]) -> Vec<EntityPairCandidate> {
    visuals
        .iter()
        .flat_map(|v| {
            textuals.iter().map(move |t| EntityPairCandidate {
                visual: v.clone(),
                textual: t.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PreExtraction;
    use std::sync::Mutex;

    pub(crate) fn visual(id: &str, class: &str, conf: f64) -> VisualEntity {
        VisualEntity {
            entity_id: id.into(),
            class_label: class.into(),
            region: BoundingBox { x: 0.0, y: 0.0, w: 10.0, h: 10.0 },
            crop_ref: format!("crop/{id}"),
            confidence: conf,
        }
    }

    struct Canned(Mutex<Vec<Value>>);

    impl JsonTransport for Canned {
        fn post_json(&self, _: &str, _: &Value, _: Option<&str>) -> Result<Value> {
            Ok(self.0.lock().unwrap().remove(0))
        }
    }

    fn extractor(cfg: ExtractorConfig) -> Extractor {
        Extractor::new(cfg, Arc::new(Canned(Mutex::new(vec![])))).unwrap()
    }

    fn sidecar_item() -> NewsItem {
        NewsItem::new("n1", "img.jpg", "A dog in the park").with_pre_extracted(PreExtraction {
            visual_entities: vec![visual("v0", "dog", 0.9), visual("v1", "person", 0.4), visual("v2", "tree", 0.7)],
            textual_entities: vec![],
        })
    }

    #[test]
    fn sidecar_pass_through_and_filter() {
        let item = sidecar_item();
        let all = extractor(ExtractorConfig::default()).extract_visual(&item).unwrap();
        assert_eq!(all.len(), 3);
        let none = extractor(ExtractorConfig { min_confidence: 0.95, ..Default::default() })
            .extract_visual(&item)
            .unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn remote_zero_width_region_rejected() {
        let mut bad = visual("v1", "car", 0.8);
        bad.region.w = 0.0;
        let resp = json!([visual("v0", "dog", 0.9), bad, visual("v2", "cat", 0.6)]);
        let ex = Extractor::new(
            ExtractorConfig {
                visual_provider: VisualProvider::Remote { endpoint: "http://det".into() },
                ..Default::default()
            },
            Arc::new(Canned(Mutex::new(vec![resp]))),
        )
        .unwrap();
        let item = NewsItem::new("n", "https://example.org/a.jpg", "caption");
        let ids: Vec<_> = ex.extract_visual(&item).unwrap().into_iter().map(|e| e.entity_id).collect();
        assert_eq!(ids, ["v0", "v2"]);
    }

    #[test]
    fn remote_unreadable_image() {
        let ex = Extractor::new(
            ExtractorConfig {
                visual_provider: VisualProvider::Remote { endpoint: "http://det".into() },
                ..Default::default()
            },
            Arc::new(Canned(Mutex::new(vec![]))),
        )
        .unwrap();
        let item = NewsItem::new("n", "/definitely/not/here.jpg", "caption");
        assert!(matches!(ex.extract_visual(&item), Err(Error::ImageUnreadable(_))));
    }

    #[test]
    fn rule_based_capitalized_runs() {
        let ents = rule_based_entities("Marco Rubio speaks in Minneapolis");
        let surfaces: Vec<_> = ents.iter().map(|e| e.surface.as_str()).collect();
        assert_eq!(surfaces, ["Marco Rubio", "Minneapolis"]);
        assert_eq!(ents[0].span, Span { start: 0, end: 11 });
        assert_eq!(ents[1].span, Span { start: 22, end: 33 });
        assert!(ents.iter().all(|e| e.ner_label == "ENT"));
    }

    #[test]
    fn rule_based_sentence_initial_only() {
        assert!(rule_based_entities("People cheer in the street").is_empty());
        assert!(rule_based_entities("the crowd waits. Then it rains").is_empty());
    }

    #[test]
    fn rule_based_punctuation_breaks_runs() {
        let ents = rule_based_entities("Crowds greet the Pope in Ciudad Juarez, Mexico.");
        let surfaces: Vec<_> = ents.iter().map(|e| e.surface.as_str()).collect();
        assert_eq!(surfaces, ["Pope", "Ciudad Juarez", "Mexico"]);
        for e in &ents {
            assert!(e.matches_caption("Crowds greet the Pope in Ciudad Juarez, Mexico."));
        }
    }

    #[test]
    fn sidecar_span_beyond_caption_rejected() {
        let item = NewsItem::new("n", "x", "Rome at night").with_pre_extracted(PreExtraction {
            visual_entities: vec![],
            textual_entities: vec![
                TextualEntity { entity_id: "t0".into(), surface: "Rome".into(), span: Span { start: 0, end: 4 }, ner_label: "GPE".into() },
                TextualEntity { entity_id: "t1".into(), surface: "night!".into(), span: Span { start: 8, end: 40 }, ner_label: "TIME".into() },
            ],
        });
        let ex = extractor(ExtractorConfig { textual_provider: TextualProvider::Sidecar, ..Default::default() });
        let ents = ex.extract_textual(&item).unwrap();
        assert_eq!(ents.len(), 1);
        assert_eq!(ents[0].surface, "Rome");
    }

    #[test]
    fn overlap_resolution_prefers_longer_then_earlier() {
        let mk = |id: &str, s, e| TextualEntity { entity_id: id.into(), surface: String::new(), span: Span { start: s, end: e }, ner_label: "X".into() };
        let kept = resolve_overlaps(vec![mk("short", 0, 3), mk("long", 2, 10), mk("tie_late", 12, 15), mk("tie_early", 11, 14)]);
        let ids: Vec<_> = kept.iter().map(|e| e.entity_id.as_str()).collect();
        assert_eq!(ids, ["long", "tie_early"]);
    }

    #[test]
    fn char_slice_handles_multibyte() {
        let s = "Zoë in Köln";
        assert_eq!(char_slice(s, Span { start: 7, end: 11 }), Some("Köln"));
        assert_eq!(char_slice(s, Span { start: 7, end: 12 }), None);
    }

    #[test]
    fn cartesian_pairs() {
        let vs = vec![visual("a", "x", 1.0), visual("b", "y", 1.0)];
        let ts = rule_based_entities("we saw Anna, Bob and Carl");
        assert_eq!(ts.len(), 3);
        let pairs = pair_candidates(&vs, &ts);
        assert_eq!(pairs.len(), 6);
        assert_eq!(pairs[1].visual.entity_id, "a");
        assert_eq!(pairs[1].textual.surface, "Bob");
        assert_eq!(pairs[3].visual.entity_id, "b");
        assert!(pair_candidates(&[], &ts).is_empty());
        assert_eq!(pair_candidates(&vs[..1], &ts[..1]).len(), 1);
    }
}
