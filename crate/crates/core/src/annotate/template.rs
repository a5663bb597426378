//! Prompt templates with named `{slot}` placeholders. `{{` and `}}` are literal braces.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, EfaError, Result};

const STEPS: &str = include_str!("../../config/prompts/steps.toml");
const EXPLANATION: &str = include_str!("../../config/prompts/explanation.toml");
const ERROR_ANALYSIS: &str = include_str!("../../config/prompts/error_analysis.toml");
const STANDARD_REVIEW: &str = include_str!("../../config/prompts/standard_review.toml");
const CHECKER: &str = include_str!("../../config/prompts/checker.toml");

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub name: String,
    pub version: u32,
    #[serde(default)]
    pub slots: Vec<String>,
    pub text: String,
}

fn parse_segments(text: &str) -> std::result::Result<Vec<Segment>, String> {
    let mut out = Vec::new();
    let mut lit = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                lit.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                lit.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) if ch.is_ascii_alphanumeric() || ch == '_' => name.push(ch),
                        Some(ch) => return Err(format!("invalid character `{ch}` in slot name")),
                        None => return Err("unterminated slot".into()),
                    }
                }
                if name.is_empty() {
                    return Err("empty slot name".into());
                }
                if !lit.is_empty() {
                    out.push(Segment::Literal(std::mem::take(&mut lit)));
                }
                out.push(Segment::Slot(name));
            }
            '}' => return Err("unmatched `}`".into()),
            _ => lit.push(c),
        }
    }
    if !lit.is_empty() {
        out.push(Segment::Literal(lit));
    }
    Ok(out)
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, version: u32, slots: &[&str], text: impl Into<String>) -> Result<Self> {
        let t = Self { name: name.into(), version, slots: slots.iter().map(|s| s.to_string()).collect(), text: text.into() };
        t.validate()?;
        Ok(t)
    }

    pub fn parse(toml_text: &str, context: &str) -> Result<Self> {
        let t: Self = toml::from_str(toml_text).map_err(|e| EfaError::Config(format!("{context}: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    /// Each declared slot appears exactly once and nothing undeclared appears.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| EfaError::Config(format!("template `{}`: {m}", self.name));
        let segments = parse_segments(&self.text).map_err(bad)?;
        let mut counts: BTreeMap<&str, usize> = self.slots.iter().map(|s| (s.as_str(), 0)).collect();
        if counts.len() != self.slots.len() {
            return Err(bad("a slot is declared twice".into()));
        }
        for s in &segments {
            if let Segment::Slot(name) = s {
                *counts.get_mut(name.as_str()).ok_or_else(|| bad(format!("slot `{name}` is not declared")))? += 1;
            }
        }
        if let Some((name, n)) = counts.iter().find(|(_, &n)| n != 1) {
            return Err(bad(format!("slot `{name}` appears {n} times, expected once")));
        }
        Ok(())
    }

    /// Substitute every slot. Extra values are ignored; a missing one is an error naming it.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String> {
        let segments = parse_segments(&self.text).map_err(|m| EfaError::Config(format!("template `{}`: {m}", self.name)))?;
        let mut out = String::with_capacity(self.text.len());
        for s in segments {
            match s {
                Segment::Literal(l) => out.push_str(&l),
                Segment::Slot(name) => out.push_str(values.get(name.as_str()).ok_or(EfaError::MissingSlot(name))?),
            }
        }
        Ok(out)
    }
}

/// All prompts the annotation pipeline uses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    /// Slots: category, mode.
    pub steps: PromptTemplate,
    /// Slots: category, mode, quality, steps, instruction, analysis.
    pub explanation: PromptTemplate,
    /// Fills `analysis` for non-standard samples.
    pub error_analysis: PromptTemplate,
    /// Fills `analysis` for standard samples.
    pub standard_review: PromptTemplate,
    /// Slots: quality, steps, explanation.
    pub checker: PromptTemplate,
}

const REQUIRED: [(&str, &[&str]); 5] = [
    ("steps", &["category", "mode"]),
    ("explanation", &["category", "mode", "quality", "steps", "instruction", "analysis"]),
    ("error_analysis", &[]),
    ("standard_review", &[]),
    ("checker", &["quality", "steps", "explanation"]),
];

impl Default for TemplateSet {
    fn default() -> Self {
        let p = |text: &str, name: &str| PromptTemplate::parse(text, name).expect("shipped template is valid");
        Self {
            steps: p(STEPS, "steps.toml"),
            explanation: p(EXPLANATION, "explanation.toml"),
            error_analysis: p(ERROR_ANALYSIS, "error_analysis.toml"),
            standard_review: p(STANDARD_REVIEW, "standard_review.toml"),
            checker: p(CHECKER, "checker.toml"),
        }
    }
}

impl TemplateSet {
    /// Read `<name>.toml` for every template from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let l = |name: &str| PromptTemplate::load(&dir.join(format!("{name}.toml")));
        let set = Self {
            steps: l("steps")?,
            explanation: l("explanation")?,
            error_analysis: l("error_analysis")?,
            standard_review: l("standard_review")?,
            checker: l("checker")?,
        };
        set.check_slots()?;
        Ok(set)
    }

    fn check_slots(&self) -> Result<()> {
        for (name, slots) in REQUIRED {
            let t = match name {
                "steps" => &self.steps,
                "explanation" => &self.explanation,
                "error_analysis" => &self.error_analysis,
                "standard_review" => &self.standard_review,
                _ => &self.checker,
            };
            let mut have: Vec<&str> = t.slots.iter().map(String::as_str).collect();
            let mut want = slots.to_vec();
            have.sort_unstable();
            want.sort_unstable();
            if have != want {
                return Err(EfaError::Config(format!("template `{name}` must declare slots {want:?}, found {have:?}")));
            }
        }
        Ok(())
    }
}
