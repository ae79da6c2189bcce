//! Retrieval → Detective → Analyst reasoning pipeline.
//!
//! Each stage is one gateway call. Stage outputs follow a small structured
//! contract the prompts ask for:
//!
//! * retrieval: lines starting with `- ` under a `FLAGS:` heading;
//! * detective: `ELEMENT <name>: <status> — <note>` for the five elements;
//! * analyst: a final `VERDICT: OOC` or `VERDICT: PRISTINE` line.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::corpus::NewsItem;
use crate::error::{Error, Result};
use crate::llm_gateway::{request_digest, ChatRequest, Gateway};
use crate::prompts::{PromptSet, PromptVars, Template};
use crate::retrieval::EvidenceSet;
use crate::vector_index::Granularity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub use_retrieval_agent: bool,
    pub use_detective_agent: bool,
    pub use_event_evidence: bool,
    pub use_entity_evidence: bool,
    /// Attach the item's image reference to every stage request.
    pub send_image: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::full()
    }
}

impl PipelineConfig {
    pub const fn full() -> Self {
        PipelineConfig {
            use_retrieval_agent: true,
            use_detective_agent: true,
            use_event_evidence: true,
            use_entity_evidence: true,
            send_image: true,
        }
    }

    pub const fn new(retrieval_agent: bool, detective_agent: bool, event_evidence: bool, entity_evidence: bool) -> Self {
        PipelineConfig {
            use_retrieval_agent: retrieval_agent,
            use_detective_agent: detective_agent,
            use_event_evidence: event_evidence,
            use_entity_evidence: entity_evidence,
            send_image: true,
        }
    }

    pub fn uses_evidence(&self) -> bool {
        self.use_event_evidence || self.use_entity_evidence
    }

    /// Stages that run under this configuration, in order.
    pub fn stages(&self) -> Vec<Stage> {
        let mut s = Vec::with_capacity(3);
        if self.use_retrieval_agent {
            s.push(Stage::Retrieval);
        }
        if self.use_detective_agent {
            s.push(Stage::Detective);
        }
        s.push(Stage::Analyst);
        s
    }

    /// Short label such as `A+D+R/event+entity`.
    pub fn label(&self) -> String {
        let mut agents = String::from("A");
        if self.use_detective_agent {
            agents.push_str("+D");
        }
        if self.use_retrieval_agent {
            agents.push_str("+R");
        }
        let evidence = match (self.use_event_evidence, self.use_entity_evidence) {
            (true, true) => "event+entity",
            (true, false) => "event",
            (false, true) => "entity",
            (false, false) => "none",
        };
        format!("{agents}/{evidence}")
    }
}

/// The six component combinations of the ablation study, in table order.
pub fn ablation_rows() -> [PipelineConfig; 6] {
    [
        PipelineConfig::new(false, false, false, false),
        PipelineConfig::new(false, false, true, true),
        PipelineConfig::new(false, true, true, true),
        PipelineConfig::new(true, false, true, true),
        PipelineConfig::new(true, true, true, false),
        PipelineConfig::new(true, true, true, true),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieval,
    Detective,
    Analyst,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Retrieval => "retrieval",
            Stage::Detective => "detective",
            Stage::Analyst => "analyst",
        }
    }
}

pub const ANALYST_REPAIR_TAG: &str = "analyst_repair";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Element {
    Time,
    Place,
    Person,
    Event,
    Object,
}

impl Element {
    pub const ALL: [Element; 5] = [Element::Time, Element::Place, Element::Person, Element::Event, Element::Object];

    pub fn as_str(self) -> &'static str {
        match self {
            Element::Time => "time",
            Element::Place => "place",
            Element::Person => "person",
            Element::Event => "event",
            Element::Object => "object",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Element::ALL.into_iter().find(|e| e.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementStatus {
    Consistent,
    Contradicted,
    Unknown,
}

impl ElementStatus {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "consistent" => Some(ElementStatus::Consistent),
            "contradicted" => Some(ElementStatus::Contradicted),
            "unknown" => Some(ElementStatus::Unknown),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementStatus::Consistent => "consistent",
            ElementStatus::Contradicted => "contradicted",
            ElementStatus::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementCheck {
    pub status: ElementStatus,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalFindings {
    pub flagged_inconsistencies: Vec<String>,
    pub stage_raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectiveFindings {
    pub element_checks: BTreeMap<Element, ElementCheck>,
    pub stage_raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StageFindings {
    Retrieval { flags: Vec<String> },
    Detective { element_checks: BTreeMap<Element, ElementCheck> },
    Analyst { c_ooc: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tag: String,
    pub prompt_digest: String,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Gateway calls made by this stage; the analyst may need a repair call.
    pub calls: Vec<CallRecord>,
    pub findings: StageFindings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub item_id: String,
    pub c_ooc: u8,
    pub explanation: String,
    pub trace: Vec<StageRecord>,
    pub config_used: PipelineConfig,
}

impl Verdict {
    pub fn is_ooc(&self) -> bool {
        self.c_ooc == 1
    }

    pub fn verdict_line(&self) -> &'static str {
        if self.is_ooc() {
            "VERDICT: OOC"
        } else {
            "VERDICT: PRISTINE"
        }
    }
}

/// Evidence block for the prompts. Requires a verified set.
pub fn render_evidence(e: &EvidenceSet, cfg: &PipelineConfig) -> Result<String> {
    if !e.verified {
        return Err(Error::UnverifiedEvidence);
    }
    let mut lists: Vec<Granularity> = Vec::new();
    if cfg.use_entity_evidence {
        lists.extend([Granularity::Visual, Granularity::Textual]);
    }
    if cfg.use_event_evidence {
        lists.push(Granularity::Event);
    }
    let mut out = String::new();
    for g in lists {
        for h in e.hits(g) {
            let payload = h.payload.replace('\n', " ");
            let _ = writeln!(out, "[{}] source={} dist={:.4} :: {}", g.as_str(), h.source_news_id, h.distance, payload);
        }
    }
    Ok(out.trim_end().to_string())
}

/// Lines starting with `- ` directly under the last `FLAGS:` heading.
pub fn parse_flags(text: &str) -> Vec<String> {
    let lines: Vec<&str> = text.lines().collect();
    let Some(start) = lines.iter().rposition(|l| l.trim().eq_ignore_ascii_case("FLAGS:")) else {
        return Vec::new();
    };
    lines[start + 1..]
        .iter()
        .map(|l| l.trim())
        .take_while(|l| l.starts_with("- ") || l.starts_with("* ") || *l == "-")
        .map(|l| l[1..].trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Parses `ELEMENT <name>: <status> — <note>` lines. Later lines for the
/// same element override earlier ones; unparseable lines are skipped.
pub fn parse_elements(text: &str) -> BTreeMap<Element, ElementCheck> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['*', '-', ' ']);
        let Some(rest) = line.strip_prefix("ELEMENT ") else { continue };
        let Some((name, body)) = rest.split_once(':') else { continue };
        let Some(element) = Element::parse(name) else { continue };
        let body = body.trim();
        let (status, note) = match body.split_once('—').or_else(|| body.split_once(" - ")) {
            Some((s, n)) => (s, n.trim()),
            None => (body, ""),
        };
        let Some(status) = ElementStatus::parse(status) else { continue };
        out.insert(element, ElementCheck { status, note: note.to_string() });
    }
    out
}

/// Splits a response ending in a verdict line into `(c_ooc, explanation)`.
pub fn parse_verdict(text: &str) -> Option<(u8, String)> {
    let trimmed = text.trim_end();
    let (body, last) = match trimmed.rfind('\n') {
        Some(i) => (&trimmed[..i], &trimmed[i + 1..]),
        None => ("", trimmed),
    };
    let last = last.trim().trim_matches('*').trim().trim_end_matches('.');
    let c_ooc = match last.strip_prefix("VERDICT:")?.trim() {
        v if v.eq_ignore_ascii_case("OOC") => 1,
        v if v.eq_ignore_ascii_case("PRISTINE") => 0,
        _ => return None,
    };
    Some((c_ooc, body.trim().to_string()))
}

fn render_retrieval_findings(f: &RetrievalFindings) -> String {
    let mut out = String::from("FLAGS:\n");
    for flag in &f.flagged_inconsistencies {
        let _ = writeln!(out, "- {flag}");
    }
    out
}

fn render_detective_findings(f: &DetectiveFindings) -> String {
    let mut out = String::new();
    for e in Element::ALL {
        if let Some(c) = f.element_checks.get(&e) {
            let _ = writeln!(out, "ELEMENT {}: {} — {}", e.as_str(), c.status.as_str(), c.note);
        }
    }
    out
}

/// Everything a stage needs besides its own inputs.
pub struct StageContext<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub send_image: bool,
}

impl StageContext<'_> {
    fn call(&self, tag: &str, item: &NewsItem, template: &Template, vars: &PromptVars<'_>) -> Result<CallRecord> {
        let (system, user) = template.render(vars);
        self.call_raw(tag, item, system, vec![user])
    }

    fn call_raw(&self, tag: &str, item: &NewsItem, system: String, messages: Vec<String>) -> Result<CallRecord> {
        let mut req: ChatRequest = self.gateway.request(tag, &item.id, system);
        req.user_messages = messages;
        if self.send_image {
            req.image_refs.push(item.image_ref.clone());
        }
        let digest = request_digest(&req);
        debug!(item = %item.id, stage = tag, %digest, "stage call");
        let resp = self.gateway.complete(&req)?;
        Ok(CallRecord {
            tag: tag.to_string(),
            prompt_digest: digest,
            prompt: req.user_messages.join("\n\n"),
            response: resp.text,
        })
    }
}

fn image_note(item: &NewsItem, send_image: bool) -> String {
    if send_image {
        format!("attached ({})", item.image_ref)
    } else {
        "not attached".to_string()
    }
}

pub fn run_retrieval_agent(item: &NewsItem, evidence_text: &str, ctx: &StageContext<'_>) -> Result<(RetrievalFindings, StageRecord)> {
    let note = image_note(item, ctx.send_image);
    let vars = PromptVars { caption: &item.caption, image_note: &note, evidence: evidence_text, ..Default::default() };
    let call = ctx.call(Stage::Retrieval.tag(), item, &ctx.prompts.retrieval, &vars)?;
    let findings = RetrievalFindings {
        flagged_inconsistencies: parse_flags(&call.response),
        stage_raw: call.response.clone(),
    };
    let record = StageRecord {
        stage: Stage::Retrieval,
        calls: vec![call],
        findings: StageFindings::Retrieval { flags: findings.flagged_inconsistencies.clone() },
    };
    Ok((findings, record))
}

pub fn run_detective_agent(
    item: &NewsItem,
    evidence_text: &str,
    prior: Option<&RetrievalFindings>,
    ctx: &StageContext<'_>,
) -> Result<(DetectiveFindings, StageRecord)> {
    let note = image_note(item, ctx.send_image);
    let prior_text = prior.map(render_retrieval_findings).unwrap_or_default();
    let vars = PromptVars {
        caption: &item.caption,
        image_note: &note,
        evidence: evidence_text,
        prior_findings: prior_text.trim_end(),
        ..Default::default()
    };
    let call = ctx.call(Stage::Detective.tag(), item, &ctx.prompts.detective, &vars)?;
    let mut checks = parse_elements(&call.response);
    for e in Element::ALL {
        checks.entry(e).or_insert(ElementCheck { status: ElementStatus::Unknown, note: String::new() });
    }
    let findings = DetectiveFindings { element_checks: checks, stage_raw: call.response.clone() };
    let record = StageRecord {
        stage: Stage::Detective,
        calls: vec![call],
        findings: StageFindings::Detective { element_checks: findings.element_checks.clone() },
    };
    Ok((findings, record))
}

/// Runs the analyst; returns `(c_ooc, explanation, stage record)`.
pub fn run_analyst_agent(
    item: &NewsItem,
    evidence_text: &str,
    retrieval: Option<&RetrievalFindings>,
    detective: Option<&DetectiveFindings>,
    ctx: &StageContext<'_>,
) -> Result<(u8, String, StageRecord)> {
    let note = image_note(item, ctx.send_image);
    let mut prior = String::new();
    if let Some(r) = retrieval {
        prior.push_str(&render_retrieval_findings(r));
    }
    if let Some(d) = detective {
        prior.push_str(&render_detective_findings(d));
    }
    let vars = PromptVars {
        caption: &item.caption,
        image_note: &note,
        evidence: evidence_text,
        prior_findings: prior.trim_end(),
        ..Default::default()
    };
    let first = ctx.call(Stage::Analyst.tag(), item, &ctx.prompts.analyst, &vars)?;
    let mut calls = vec![first];
    let parsed = match parse_verdict(&calls[0].response) {
        Some(p) => p,
        None => {
            let (system, repair_user) = ctx.prompts.analyst_repair.render(&PromptVars {
                previous_answer: calls[0].response.trim(),
                ..vars
            });
            let (_, original_user) = ctx.prompts.analyst.render(&vars);
            let repair = ctx.call_raw(ANALYST_REPAIR_TAG, item, system, vec![original_user, repair_user])?;
            let parsed = parse_verdict(&repair.response);
            calls.push(repair);
            parsed.ok_or_else(|| Error::UnparseableVerdict(calls[1].response.clone()))?
        }
    };
    let (c_ooc, mut explanation) = parsed;
    if explanation.is_empty() {
        // A bare verdict line (or a repair that only restates it) still
        // needs a readable explanation.
        explanation = calls
            .first()
            .map(|c| c.response.trim())
            .filter(|r| parse_verdict(r).is_none() && !r.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| {
                format!(
                    "The analyst returned {} without further explanation.",
                    if c_ooc == 1 { "VERDICT: OOC" } else { "VERDICT: PRISTINE" }
                )
            });
    }
    let record = StageRecord { stage: Stage::Analyst, calls, findings: StageFindings::Analyst { c_ooc } };
    Ok((c_ooc, explanation, record))
}

/// Runs the enabled stages in order over an already-verified evidence set.
///
/// `evidence` must be `Some` whenever `cfg` enables an evidence list.
pub fn run_agents(
    item: &NewsItem,
    evidence: Option<&EvidenceSet>,
    cfg: &PipelineConfig,
    gateway: &Gateway,
    prompts: &PromptSet,
) -> Result<Verdict> {
    let evidence_text = match (cfg.uses_evidence(), evidence) {
        (false, _) => String::new(),
        (true, Some(e)) => render_evidence(e, cfg)?,
        (true, None) => return Err(Error::InvalidInput("pipeline config requests evidence but none was retrieved".into())),
    };
    let ctx = StageContext { gateway, prompts, send_image: cfg.send_image };
    let mut trace = Vec::with_capacity(3);

    let retrieval = if cfg.use_retrieval_agent {
        let (f, rec) = run_retrieval_agent(item, &evidence_text, &ctx)?;
        trace.push(rec);
        Some(f)
    } else {
        None
    };
    let detective = if cfg.use_detective_agent {
        let (f, rec) = run_detective_agent(item, &evidence_text, retrieval.as_ref(), &ctx)?;
        trace.push(rec);
        Some(f)
    } else {
        None
    };
    let (c_ooc, explanation, rec) = run_analyst_agent(item, &evidence_text, retrieval.as_ref(), detective.as_ref(), &ctx)?;
    trace.push(rec);

    Ok(Verdict { item_id: item.id.clone(), c_ooc, explanation, trace, config_used: *cfg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{GatewayConfig, Script};
    use crate::retrieval::{aggregate, verify};
    use crate::vector_index::Hit;

    fn hit(src: &str, d: f64, payload: &str) -> Hit {
        Hit { record_id: format!("{src}#r"), source_news_id: src.into(), payload: payload.into(), distance: d }
    }

    fn full_evidence() -> EvidenceSet {
        verify(&aggregate(
            vec![hit("n1", 0.12345, "person"), hit("n2", 0.5, "car")],
            vec![hit("n3", 0.2, "Ciudad Juarez"), hit("n4", 0.3, "World of Work")],
            vec![hit("n5", 0.7, "The pope smiles"), hit("n6", 0.9, "A rally")],
        ))
    }

    fn item() -> NewsItem {
        NewsItem::new("s1", "img/s1.jpg", "The pope arrives in Ciudad Juarez")
    }

    fn scripted(entries: &[(&str, &str)]) -> Gateway {
        let mut script = Script::default();
        for (stage, text) in entries {
            script.insert(stage, "s1", *text);
        }
        Gateway::scripted(GatewayConfig::default(), script).unwrap()
    }

    #[test]
    fn evidence_rendering() {
        let e = full_evidence();
        assert_eq!(render_evidence(&e, &PipelineConfig::new(true, true, false, false)).unwrap(), "");
        let event_only = render_evidence(&e, &PipelineConfig::new(true, true, true, false)).unwrap();
        assert_eq!(event_only.lines().count(), 2);
        assert!(event_only.lines().all(|l| l.starts_with("[event]")));
        let full = render_evidence(&e, &PipelineConfig::full()).unwrap();
        let lines: Vec<_> = full.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "[visual] source=n1 dist=0.1235 :: person");
        assert!(lines[2].starts_with("[textual]"));
        assert!(lines[5].starts_with("[event] source=n6 dist=0.9000"));
        let unverified = aggregate(vec![], vec![], vec![]);
        assert!(matches!(render_evidence(&unverified, &PipelineConfig::full()), Err(Error::UnverifiedEvidence)));
    }

    #[test]
    fn flag_parsing() {
        assert_eq!(parse_flags("Some notes\nFLAGS:\n- location mismatch"), vec!["location mismatch"]);
        assert!(parse_flags("nothing to report").is_empty());
        assert_eq!(parse_flags("FLAGS:\n- a\n- b\n\ntrailing prose"), vec!["a", "b"]);
    }

    #[test]
    fn element_parsing() {
        let text = "ELEMENT time: consistent — daytime\nELEMENT place: contradicted — not Mexico\nELEMENT person: unknown — faces hidden\nELEMENT event: consistent - rally\n";
        let checks = parse_elements(text);
        assert_eq!(checks.len(), 4);
        assert_eq!(checks[&Element::Place].status, ElementStatus::Contradicted);
        assert_eq!(checks[&Element::Place].note, "not Mexico");
        assert_eq!(checks[&Element::Event].note, "rally");
        assert!(!checks.contains_key(&Element::Object));
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("clear mismatch\nVERDICT: OOC"), Some((1, "clear mismatch".into())));
        assert_eq!(parse_verdict("VERDICT: PRISTINE"), Some((0, String::new())));
        assert_eq!(parse_verdict("fine\n**VERDICT: PRISTINE**\n"), Some((0, "fine".into())));
        assert_eq!(parse_verdict("VERDICT: OOC\nbut then more text"), None);
        assert_eq!(parse_verdict("no verdict"), None);
    }

    #[test]
    fn retrieval_agent_contract() {
        let prompts = PromptSet::builtin("v1").unwrap();
        let gw = scripted(&[("retrieval", "Checked.\nFLAGS:\n- location mismatch")]);
        let ctx = StageContext { gateway: &gw, prompts: &prompts, send_image: true };
        let (f, rec) = run_retrieval_agent(&item(), "", &ctx).unwrap();
        assert_eq!(f.flagged_inconsistencies, vec!["location mismatch"]);
        assert_eq!(rec.calls.len(), 1);

        let gw = scripted(&[("retrieval", "All good, nothing odd.")]);
        let ctx = StageContext { gateway: &gw, prompts: &prompts, send_image: true };
        let (f, _) = run_retrieval_agent(&item(), "", &ctx).unwrap();
        assert!(f.flagged_inconsistencies.is_empty());
        assert_eq!(f.stage_raw, "All good, nothing odd.");
    }

    #[test]
    fn detective_missing_element_is_unknown() {
        let prompts = PromptSet::builtin("v1").unwrap();
        let all = "ELEMENT time: consistent — a\nELEMENT place: consistent — b\nELEMENT person: contradicted — c\nELEMENT event: consistent — d\nELEMENT object: consistent — e";
        let gw = scripted(&[("detective", all)]);
        let ctx = StageContext { gateway: &gw, prompts: &prompts, send_image: true };
        let (f, _) = run_detective_agent(&item(), "", None, &ctx).unwrap();
        assert_eq!(f.element_checks[&Element::Person].status, ElementStatus::Contradicted);
        assert_eq!(f.element_checks[&Element::Object].status, ElementStatus::Consistent);

        let four = all.rsplit_once('\n').unwrap().0;
        let gw = scripted(&[("detective", four)]);
        let ctx = StageContext { gateway: &gw, prompts: &prompts, send_image: true };
        let (f, _) = run_detective_agent(&item(), "", None, &ctx).unwrap();
        assert_eq!(f.element_checks.len(), 5);
        assert_eq!(f.element_checks[&Element::Object].status, ElementStatus::Unknown);
    }

    #[test]
    fn analyst_verdicts_and_repair() {
        let prompts = PromptSet::builtin("v1").unwrap();
        let gw = scripted(&[("analyst", "The place does not match; clear mismatch.\nVERDICT: OOC")]);
        let ctx = StageContext { gateway: &gw, prompts: &prompts, send_image: true };
        let (c, exp, rec) = run_analyst_agent(&item(), "", None, None, &ctx).unwrap();
        assert_eq!(c, 1);
        assert_eq!(exp, "The place does not match; clear mismatch.");
        assert_eq!(rec.calls.len(), 1);

        let gw = scripted(&[("analyst", "VERDICT: PRISTINE")]);
        let ctx = StageContext { gateway: &gw, prompts: &prompts, send_image: true };
        let (c, exp, _) = run_analyst_agent(&item(), "", None, None, &ctx).unwrap();
        assert_eq!(c, 0);
        assert!(!exp.is_empty());

        let gw = scripted(&[("analyst", "I think it is probably misleading."), (ANALYST_REPAIR_TAG, "Misleading.\nVERDICT: OOC")]);
        let ctx = StageContext { gateway: &gw, prompts: &prompts, send_image: true };
        let (c, exp, rec) = run_analyst_agent(&item(), "", None, None, &ctx).unwrap();
        assert_eq!(c, 1);
        assert_eq!(exp, "Misleading.");
        assert_eq!(rec.calls.len(), 2);
        assert_eq!(rec.calls[1].tag, ANALYST_REPAIR_TAG);
        assert!(rec.calls[1].prompt.contains("I think it is probably misleading."));

        let gw = scripted(&[("analyst", "hmm"), (ANALYST_REPAIR_TAG, "still hmm")]);
        let ctx = StageContext { gateway: &gw, prompts: &prompts, send_image: true };
        assert!(matches!(run_analyst_agent(&item(), "", None, None, &ctx), Err(Error::UnparseableVerdict(_))));
    }

    #[test]
    fn trace_matches_enabled_stages() {
        let prompts = PromptSet::builtin("v1").unwrap();
        let gw = Gateway::new(GatewayConfig::default()).unwrap();
        let e = full_evidence();
        for cfg in ablation_rows() {
            let v = run_agents(&item(), Some(&e), &cfg, &gw, &prompts).unwrap();
            let stages: Vec<_> = v.trace.iter().map(|r| r.stage).collect();
            assert_eq!(stages, cfg.stages(), "{}", cfg.label());
        }
        let v = run_agents(&item(), None, &ablation_rows()[0], &gw, &prompts).unwrap();
        assert_eq!(v.trace.len(), 1);
        assert!(run_agents(&item(), None, &PipelineConfig::full(), &gw, &prompts).is_err());
    }

    #[test]
    fn ablation_rows_are_distinct() {
        let rows = ablation_rows();
        let set: std::collections::HashSet<_> = rows.iter().collect();
        assert_eq!(set.len(), 6);
        assert_eq!(rows[5], PipelineConfig::full());
        assert_eq!(rows[0].label(), "A/none");
        assert_eq!(rows[4].label(), "A+D+R/event");
    }
}
