//! News-item data model and line-delimited corpus ingestion.
//!
//! A corpus file holds one JSON object per line. Required keys are `id`,
//! `image_ref` and `caption`; `label`, `category` and `pre_extracted` are
//! optional. Any other keys are carried through untouched.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::extraction::{TextualEntity, VisualEntity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Falsified,
    Pristine,
}

impl Label {
    /// The `c_ooc` value a correct prediction carries for this label.
    pub fn as_ooc(self) -> u8 {
        match self {
            Label::Falsified => 1,
            Label::Pristine => 0,
        }
    }
}

/// Mismatch strategy that produced a falsified pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "text_image")]
    TextImage,
    #[serde(rename = "text_text")]
    TextText,
    #[serde(rename = "person")]
    PersonMatching,
    #[serde(rename = "scene")]
    SceneMatching,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::TextImage,
        Category::TextText,
        Category::PersonMatching,
        Category::SceneMatching,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            Category::TextImage => "Text-Image",
            Category::TextText => "Text-Text",
            Category::PersonMatching => "Person-Matching",
            Category::SceneMatching => "Scene-Matching",
        }
    }
}

/// Entities supplied alongside the record. When present, extraction
/// providers configured as `sidecar` read from here.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreExtraction {
    #[serde(default)]
    pub visual_entities: Vec<VisualEntity>,
    #[serde(default)]
    pub textual_entities: Vec<TextualEntity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub image_ref: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_extracted: Option<PreExtraction>,
    /// Unknown keys, preserved for re-serialization.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl NewsItem {
    pub fn new(id: impl Into<String>, image_ref: impl Into<String>, caption: impl Into<String>) -> Self {
        NewsItem {
            id: id.into(),
            image_ref: image_ref.into(),
            caption: caption.into(),
            label: None,
            category: None,
            pre_extracted: None,
            extra: Map::new(),
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_category(mut self, category: Category) -> Self {
        self.category = Some(category);
        self
    }

    pub fn with_pre_extracted(mut self, pre: PreExtraction) -> Self {
        self.pre_extracted = Some(pre);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub split_name: String,
    pub items: usize,
    pub source_path: PathBuf,
    pub categories: BTreeMap<Category, usize>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub items: Vec<NewsItem>,
}

/// Returns the list of invariant violations for `item`; empty means valid.
pub fn validate_item(item: &NewsItem, mode: ValidationMode) -> Vec<String> {
    let mut violations = Vec::new();
    if item.id.is_empty() {
        violations.push("empty id".to_string());
    }
    if item.caption.trim().is_empty() {
        violations.push("empty caption".to_string());
    }
    if mode == ValidationMode::Eval && item.label.is_none() {
        violations.push("missing label".to_string());
    }
    violations
}

/// Loads a corpus file, checking record schema and id uniqueness.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let split_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut corpus = read_corpus(BufReader::new(file), split_name)?;
    corpus.manifest.source_path = path.to_path_buf();
    Ok(corpus)
}

pub fn read_corpus(reader: impl BufRead, split_name: impl Into<String>) -> Result<Corpus> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    let mut categories = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = parse_record(&line, line_no)?;
        if !seen.insert(item.id.clone()) {
            return Err(Error::DuplicateId(item.id));
        }
        if let Some(category) = item.category {
            *categories.entry(category).or_insert(0) += 1;
        }
        items.push(item);
    }

    Ok(Corpus {
        manifest: CorpusManifest {
            split_name: split_name.into(),
            items: items.len(),
            source_path: PathBuf::new(),
            categories,
        },
        items,
    })
}

fn parse_record(line: &str, line_no: usize) -> Result<NewsItem> {
    let item: NewsItem = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
        line: line_no,
        reason: e.to_string(),
    })?;
    let violations = validate_item(&item, ValidationMode::Train);
    if !violations.is_empty() {
        return Err(Error::MalformedRecord {
            line: line_no,
            reason: violations.join(", "),
        });
    }
    Ok(item)
}

pub fn write_corpus<'a>(mut writer: impl Write, items: impl IntoIterator<Item = &'a NewsItem>) -> Result<()> {
    for item in items {
        let line = serde_json::to_string(item)?;
        writeln!(writer, "{line}").map_err(|e| Error::io("<corpus writer>", e))?;
    }
    Ok(())
}

pub fn save_corpus<'a>(path: impl AsRef<Path>, items: impl IntoIterator<Item = &'a NewsItem>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    write_corpus(&mut writer, items)?;
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Corpus> {
        read_corpus(text.as_bytes(), "test")
    }

    #[test]
    fn four_valid_records() {
        let text = r#"{"id":"a1","image_ref":"img/1.jpg","caption":"one","label":"falsified","category":"text_image"}
{"id":"a2","image_ref":"img/2.jpg","caption":"two","label":"pristine","category":"person"}
{"id":"a3","image_ref":"img/3.jpg","caption":"three","category":"scene"}
{"id":"a4","image_ref":"img/4.jpg","caption":"four"}
"#;
        let corpus = parse(text).unwrap();
        assert_eq!(corpus.manifest.items, 4);
        assert_eq!(corpus.items.len(), 4);
        assert_eq!(corpus.manifest.categories.values().sum::<usize>(), 3);
        assert_eq!(corpus.items[1].category, Some(Category::PersonMatching));
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = r#"{"id":"a1","image_ref":"x","caption":"one"}
{"id":"a1","image_ref":"y","caption":"two"}"#;
        match parse(text) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "a1"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"a1\",\"image_ref\":\"x\",\"caption\":\"ok\"}\n{\"id\":\"a2\",\"caption\":\"no image\"}\n";
        match parse(text) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
        let blank_caption = "{\"id\":\"a1\",\"image_ref\":\"x\",\"caption\":\"   \"}";
        assert!(matches!(parse(blank_caption), Err(Error::MalformedRecord { line: 1, .. })));
        let bad_label = "{\"id\":\"a1\",\"image_ref\":\"x\",\"caption\":\"c\",\"label\":\"maybe\"}";
        assert!(matches!(parse(bad_label), Err(Error::MalformedRecord { line: 1, .. })));
    }

    #[test]
    fn unknown_fields_survive_reserialization() {
        let text = r#"{"id":"a1","image_ref":"x","caption":"c","source":"bbc","nested":{"k":[1,2]}}"#;
        let corpus = parse(text).unwrap();
        assert_eq!(corpus.items[0].extra["source"], "bbc");
        let mut out = Vec::new();
        write_corpus(&mut out, &corpus.items).unwrap();
        let again = parse(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(again.items, corpus.items);
    }

    #[test]
    fn validation_modes() {
        let labeled = NewsItem::new("a", "x", "caption").with_label(Label::Pristine);
        let unlabeled = NewsItem::new("b", "x", "caption");
        assert!(validate_item(&labeled, ValidationMode::Eval).is_empty());
        assert_eq!(validate_item(&unlabeled, ValidationMode::Eval), vec!["missing label"]);
        assert!(validate_item(&unlabeled, ValidationMode::Train).is_empty());
    }
}
