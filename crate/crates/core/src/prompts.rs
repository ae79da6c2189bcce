//! Versioned prompt templates.
//!
//! A template file has a `[system]` section and a `[user]` section. Named
//! placeholders `{caption}`, `{image_note}`, `{evidence}`,
//! `{prior_findings}` and `{previous_answer}` are substituted at render time.
//!
//! The user sections carry marker lines (`ROLE:`, `CAPTION:`, `EVIDENCE:` …
//! `END EVIDENCE`, `PRIOR FINDINGS:` … `END PRIOR FINDINGS`) that the
//! rule-based mock provider reads.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BUILTIN_SET: &str = "v1";

const V1_RETRIEVAL: &str = include_str!("../prompts/v1/retrieval.txt");
const V1_DETECTIVE: &str = include_str!("../prompts/v1/detective.txt");
const V1_ANALYST: &str = include_str!("../prompts/v1/analyst.txt");
const V1_REPAIR: &str = include_str!("../prompts/v1/analyst_repair.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(text: &str) -> Result<Self> {
        let sys_at = text
            .find("[system]\n")
            .ok_or_else(|| Error::Config("template lacks a [system] section".into()))?;
        let user_at = text
            .find("\n[user]\n")
            .ok_or_else(|| Error::Config("template lacks a [user] section".into()))?;
        if user_at < sys_at {
            return Err(Error::Config("[system] must precede [user]".into()));
        }
        Ok(Template {
            system: text[sys_at + "[system]\n".len()..user_at].trim_end().to_string(),
            user: text[user_at + "\n[user]\n".len()..].trim_end().to_string(),
        })
    }

    pub fn render(&self, vars: &PromptVars<'_>) -> (String, String) {
        (vars.apply(&self.system), vars.apply(&self.user))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PromptVars<'a> {
    pub caption: &'a str,
    pub image_note: &'a str,
    pub evidence: &'a str,
    pub prior_findings: &'a str,
    pub previous_answer: &'a str,
}

impl PromptVars<'_> {
    fn apply(&self, text: &str) -> String {
        // Single pass so substituted values are never re-expanded.
        let mut out = String::with_capacity(text.len() + self.evidence.len());
        let mut rest = text;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open..];
            let close = after.find('}');
            let value = close.and_then(|c| match &after[1..c] {
                "caption" => Some(self.caption),
                "image_note" => Some(self.image_note),
                "evidence" => Some(self.evidence),
                "prior_findings" => Some(self.prior_findings),
                "previous_answer" => Some(self.previous_answer),
                _ => None,
            });
            match (value, close) {
                (Some(v), Some(c)) => {
                    out.push_str(v);
                    rest = &after[c + 1..];
                }
                _ => {
                    out.push('{');
                    rest = &after[1..];
                }
            }
        }
        out.push_str(rest);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub name: String,
    pub retrieval: Template,
    pub detective: Template,
    pub analyst: Template,
    pub analyst_repair: Template,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    /// Name of a built-in set, used when `dir` is unset.
    pub set: String,
    /// Directory holding `retrieval.txt`, `detective.txt`, `analyst.txt`
    /// and `analyst_repair.txt`.
    pub dir: Option<std::path::PathBuf>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            set: BUILTIN_SET.to_string(),
            dir: None,
        }
    }
}

impl PromptSet {
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "v1" => Ok(PromptSet {
                name: "v1".into(),
                retrieval: Template::parse(V1_RETRIEVAL)?,
                detective: Template::parse(V1_DETECTIVE)?,
                analyst: Template::parse(V1_ANALYST)?,
                analyst_repair: Template::parse(V1_REPAIR)?,
            }),
            other => Err(Error::Config(format!("unknown prompt set {other:?}"))),
        }
    }

    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<Template> {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Template::parse(&text)
        };
        Ok(PromptSet {
            name: dir.display().to_string(),
            retrieval: read("retrieval.txt")?,
            detective: read("detective.txt")?,
            analyst: read("analyst.txt")?,
            analyst_repair: read("analyst_repair.txt")?,
        })
    }

    pub fn from_config(cfg: &PromptConfig) -> Result<Self> {
        match &cfg.dir {
            Some(dir) => PromptSet::from_dir(dir),
            None => PromptSet::builtin(&cfg.set),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_parse_with_markers() {
        let set = PromptSet::builtin("v1").unwrap();
        assert!(set.retrieval.user.starts_with("ROLE: retrieval"));
        assert!(set.detective.user.contains("PRIOR FINDINGS:"));
        assert!(set.analyst.system.contains("VERDICT: OOC"));
        assert!(PromptSet::builtin("v0").is_err());
    }

    #[test]
    fn placeholders_substituted_once() {
        let t = Template::parse("[system]\nsys {caption}\n[user]\nC: {caption}\nE: {evidence} {unknown}").unwrap();
        let vars = PromptVars { caption: "a {evidence} b", evidence: "EV", ..Default::default() };
        let (sys, user) = t.render(&vars);
        assert_eq!(sys, "sys a {evidence} b");
        assert_eq!(user, "C: a {evidence} b\nE: EV {unknown}");
    }

    #[test]
    fn missing_sections_rejected() {
        assert!(Template::parse("just text").is_err());
        assert!(Template::parse("[user]\nu\n[system]\ns").is_err());
    }
}
