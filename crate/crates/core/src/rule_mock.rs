//! Rule-based stand-in for the chat model.
//!
//! A pure function of the prompt text. It reads the marker lines laid down by
//! the prompt templates and answers in the stage-output contract:
//!
//! * `retrieval`: flags `low event overlap` when event evidence is present
//!   and the best event payload covers less than 30% of the caption's
//!   content tokens.
//! * `detective`: `event` is contradicted when the prior findings carry any
//!   retrieval flag, consistent otherwise. The other four elements are
//!   reported unknown.
//! * `analyst`: `OOC` when any prior element is contradicted. Without
//!   detective findings, any retrieval flag decides; with no prior findings
//!   at all, the retrieval rule is applied to the evidence directly.

use std::collections::BTreeSet;

use crate::agents::{parse_elements, parse_flags, ElementStatus};
use crate::llm_gateway::ChatRequest;

pub const LOW_OVERLAP_THRESHOLD: f64 = 0.30;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "have", "he", "her", "his", "in", "is",
    "it", "its", "of", "on", "or", "she", "that", "the", "their", "they", "this", "to", "was", "were", "with",
];

pub fn content_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Share of the caption's content tokens that also occur in `payload`.
pub fn event_overlap(caption: &str, payload: &str) -> f64 {
    let c = content_tokens(caption);
    if c.is_empty() {
        return 0.0;
    }
    let p = content_tokens(payload);
    c.intersection(&p).count() as f64 / c.len() as f64
}

#[derive(Debug, Default)]
struct PromptView<'a> {
    role: &'a str,
    caption: &'a str,
    evidence: Vec<&'a str>,
    prior: String,
}

fn section<'a>(text: &'a str, open: &str, close: &str) -> Vec<&'a str> {
    let mut lines = text.lines().skip_while(|l| l.trim() != open);
    if lines.next().is_none() {
        return Vec::new();
    }
    lines.take_while(|l| l.trim() != close).collect()
}

fn view(req: &ChatRequest) -> PromptView<'_> {
    let Some(user) = req.user_messages.first() else {
        return PromptView::default();
    };
    let field = |name: &str| {
        user.lines()
            .find_map(|l| l.strip_prefix(name))
            .map(str::trim)
            .unwrap_or_default()
    };
    PromptView {
        role: field("ROLE:"),
        caption: field("CAPTION:"),
        evidence: section(user, "EVIDENCE:", "END EVIDENCE"),
        prior: section(user, "PRIOR FINDINGS:", "END PRIOR FINDINGS").join("\n"),
    }
}

fn best_event_overlap(v: &PromptView<'_>) -> Option<f64> {
    v.evidence
        .iter()
        .filter(|l| l.starts_with("[event]"))
        .filter_map(|l| l.split_once(" :: ").map(|(_, payload)| payload))
        .map(|payload| event_overlap(v.caption, payload))
        .max_by(f64::total_cmp)
}

fn low_overlap_flag(v: &PromptView<'_>) -> Option<String> {
    best_event_overlap(v)
        .filter(|&best| best < LOW_OVERLAP_THRESHOLD)
        .map(|best| format!("low event overlap: best event evidence covers {:.0}% of caption terms", best * 100.0))
}

pub fn respond(req: &ChatRequest) -> String {
    let v = view(req);
    match v.role {
        "retrieval" => {
            let mut out = String::from("Compared the caption with the retrieved evidence.\nFLAGS:\n");
            if let Some(flag) = low_overlap_flag(&v) {
                out.push_str("- ");
                out.push_str(&flag);
                out.push('\n');
            }
            out
        }
        "detective" => {
            let flagged = !parse_flags(&v.prior).is_empty();
            let (status, note) = if flagged {
                ("contradicted", "retrieved coverage describes a different event")
            } else {
                ("consistent", "no conflicting retrieval flag")
            };
            let mut out = String::from("Checked the five elements against the evidence.\n");
            for name in ["time", "place", "person"] {
                out.push_str(&format!("ELEMENT {name}: unknown — not assessed by rule\n"));
            }
            out.push_str(&format!("ELEMENT event: {status} — {note}\n"));
            out.push_str("ELEMENT object: unknown — not assessed by rule\n");
            out
        }
        _ => analyst(&v),
    }
}

fn analyst(v: &PromptView<'_>) -> String {
    let elements = parse_elements(&v.prior);
    let flags = parse_flags(&v.prior);
    let contradicted: Vec<String> = elements
        .iter()
        .filter(|(_, c)| c.status == ElementStatus::Contradicted)
        .map(|(e, c)| format!("{} ({})", e.as_str(), c.note))
        .collect();

    let (ooc, reason) = if !elements.is_empty() {
        if contradicted.is_empty() {
            (false, "No element was found to contradict the evidence.".to_string())
        } else {
            (true, format!("Contradicted elements: {}.", contradicted.join("; ")))
        }
    } else if !flags.is_empty() {
        (true, format!("Flagged inconsistencies: {}.", flags.join("; ")))
    } else if v.prior.trim().is_empty() {
        match low_overlap_flag(v) {
            Some(flag) => (true, format!("The retrieved coverage disagrees with the caption ({flag}).")),
            None => (false, "The caption is consistent with the available context.".to_string()),
        }
    } else {
        (false, "Earlier reviewers raised no inconsistency.".to_string())
    };
    format!(
        "{reason}\nVERDICT: {}",
        if ooc { "OOC" } else { "PRISTINE" }
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> ChatRequest {
        ChatRequest::new("stage", "s", "sys").with_message(user)
    }

    #[test]
    fn overlap_hand_computed() {
        // caption content tokens: {pope, arrives, ciudad, juarez} ; payload shares {pope}
        assert_eq!(event_overlap("The pope arrives in Ciudad Juarez", "A pope in Rome"), 0.25);
        assert_eq!(event_overlap("The pope arrives in Ciudad Juarez", "pope arrives, Ciudad Juarez"), 1.0);
    }

    #[test]
    fn retrieval_flags_low_overlap() {
        let low = "ROLE: retrieval\nCAPTION: The pope arrives in Ciudad Juarez\nEVIDENCE:\n[event] source=n9 dist=0.5000 :: A pope in Rome\nEND EVIDENCE";
        let out = respond(&req(low));
        assert_eq!(parse_flags(&out).len(), 1);
        let high = low.replace("A pope in Rome", "pope arrives in Juarez");
        assert!(parse_flags(&respond(&req(&high))).is_empty());
        let no_events = "ROLE: retrieval\nCAPTION: x y z\nEVIDENCE:\nEND EVIDENCE";
        assert!(parse_flags(&respond(&req(no_events))).is_empty());
    }

    #[test]
    fn detective_and_analyst_chain() {
        let det = respond(&req("ROLE: detective\nCAPTION: c\nPRIOR FINDINGS:\nFLAGS:\n- low event overlap\nEND PRIOR FINDINGS"));
        let checks = parse_elements(&det);
        assert_eq!(checks.len(), 5);
        assert_eq!(checks[&crate::agents::Element::Event].status, ElementStatus::Contradicted);

        let analyst_in = format!("ROLE: analyst\nCAPTION: c\nPRIOR FINDINGS:\n{det}\nEND PRIOR FINDINGS");
        assert!(respond(&req(&analyst_in)).ends_with("VERDICT: OOC"));

        let clean = respond(&req("ROLE: detective\nCAPTION: c\nPRIOR FINDINGS:\nFLAGS:\nEND PRIOR FINDINGS"));
        let analyst_in = format!("ROLE: analyst\nCAPTION: c\nPRIOR FINDINGS:\n{clean}\nEND PRIOR FINDINGS");
        assert!(respond(&req(&analyst_in)).ends_with("VERDICT: PRISTINE"));
    }

    #[test]
    fn analyst_alone_is_pristine_without_evidence() {
        let out = respond(&req("ROLE: analyst\nCAPTION: c\nEVIDENCE:\nEND EVIDENCE\nPRIOR FINDINGS:\nEND PRIOR FINDINGS"));
        assert!(out.ends_with("VERDICT: PRISTINE"));
    }
}
