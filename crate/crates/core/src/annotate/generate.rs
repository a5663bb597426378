//! Step generation and explanation generation.
//!
//! Step replies are read with this extraction grammar (case-insensitive
//! keywords, surrounding whitespace ignored on every line):
//!
//! ```text
//! reply       := commentary* header step{5} instruction commentary*
//! header      := "STEPS:"
//! step        := DIGIT ("." | ")") SPACE+ TEXT        -- digits run 1..5 in order
//! instruction := "INSTRUCTION:" SPACE* TEXT
//! ```
//!
//! Blank lines between block lines are skipped, and markdown emphasis (`*`, `_`)
//! around the keywords is stripped. Lines before the first header and after the
//! instruction are commentary and are discarded. Anything else inside the
//! block makes the reply malformed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::client::{sha256_hex, GenerationClient, GenerationRequest};
use super::template::TemplateSet;
use crate::data::{ActionLexiconEntry, Quality, WorkoutMode, STEPS_PER_ENTRY};
use crate::error::{EfaError, Result};

/// One client call, enough to replay or audit it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub task: String,
    pub subject: String,
    pub client: String,
    pub attempt: usize,
    pub prompt_sha256: String,
    pub response_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedSteps {
    pub steps: Vec<String>,
    pub general_instruction: String,
    pub calls: Vec<CallRecord>,
}

impl GeneratedSteps {
    pub fn into_entry(self, category_id: usize, category_name: &str) -> Result<ActionLexiconEntry> {
        let e = ActionLexiconEntry {
            category_id,
            category_name: category_name.into(),
            steps: self.steps,
            general_instruction: self.general_instruction,
        };
        e.validate()?;
        Ok(e)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedExplanation {
    pub text: String,
    pub call: CallRecord,
}

pub fn mode_label(mode: WorkoutMode) -> &'static str {
    match mode {
        WorkoutMode::Manual => "manual",
        WorkoutMode::Apparatus => "apparatus",
    }
}

pub fn build_step_prompt(templates: &TemplateSet, category: &str, mode: WorkoutMode) -> Result<String> {
    let values = BTreeMap::from([("category", category.to_string()), ("mode", mode_label(mode).to_string())]);
    templates.steps.render(&values)
}

fn strip_emphasis(line: &str) -> &str {
    line.trim().trim_matches(|c| c == '*' || c == '_').trim()
}

fn keyword_rest<'a>(line: &'a str, keyword: &str) -> Option<&'a str> {
    let line = strip_emphasis(line);
    let head = line.get(..keyword.len())?;
    head.eq_ignore_ascii_case(keyword).then(|| strip_emphasis(&line[keyword.len()..]))
}

/// Parse a step block; the error explains what is wrong.
pub fn parse_step_block(reply: &str) -> std::result::Result<(Vec<String>, String), String> {
    let lines: Vec<&str> = reply.lines().collect();
    let start = lines.iter().position(|l| keyword_rest(l, "STEPS:").is_some_and(str::is_empty)).ok_or("no `STEPS:` header")?;
    let mut steps = Vec::new();
    let mut body = lines[start + 1..].iter().map(|l| l.trim()).filter(|l| !l.is_empty());
    for line in body.by_ref() {
        if let Some(rest) = keyword_rest(line, "INSTRUCTION:") {
            if steps.len() != STEPS_PER_ENTRY {
                return Err(format!("found {} steps, expected {STEPS_PER_ENTRY}", steps.len()));
            }
            if rest.is_empty() {
                return Err("the general instruction is empty".into());
            }
            return Ok((steps, rest.to_string()));
        }
        let mut chars = line.chars();
        let digit = chars.next().and_then(|c| c.to_digit(10));
        let sep = chars.next();
        let text = chars.as_str();
        match (digit, sep) {
            (Some(d), Some('.' | ')')) if text.starts_with(char::is_whitespace) && !text.trim().is_empty() => {
                if d as usize != steps.len() + 1 {
                    return Err(format!("step {d} is out of order"));
                }
                if steps.len() == STEPS_PER_ENTRY {
                    return Err(format!("more than {STEPS_PER_ENTRY} steps"));
                }
                steps.push(text.trim().to_string());
            }
            _ => return Err(format!("unexpected line inside the step block: `{line}`")),
        }
    }
    Err(format!("no `INSTRUCTION:` line after {} steps", steps.len()))
}

/// Ask for the five steps, re-prompting on malformed replies up to `attempts` times in total.
pub fn generate_steps(
    client: &dyn GenerationClient,
    templates: &TemplateSet,
    category: &str,
    mode: WorkoutMode,
    attempts: usize,
) -> Result<GeneratedSteps> {
    let base = build_step_prompt(templates, category, mode)?;
    let mut prompt = base.clone();
    let mut calls = Vec::new();
    let mut last = String::from("no attempt was made");
    for attempt in 1..=attempts {
        let request = GenerationRequest {
            prompt: prompt.clone(),
            media: None,
            context: BTreeMap::from([
                ("task".into(), "steps".into()),
                ("category".into(), category.into()),
                ("mode".into(), mode_label(mode).into()),
            ]),
        };
        let reply = client.generate(&request)?;
        calls.push(CallRecord {
            task: "steps".into(),
            subject: category.into(),
            client: client.id(),
            attempt,
            prompt_sha256: sha256_hex(&prompt),
            response_sha256: sha256_hex(&reply),
        });
        match parse_step_block(&reply) {
            Ok((steps, general_instruction)) => return Ok(GeneratedSteps { steps, general_instruction, calls }),
            Err(why) => {
                prompt = format!("{base}\nYour previous answer could not be used: {why}. Answer again in exactly the required format.\n");
                last = why;
            }
        }
    }
    Err(EfaError::RetriesExhausted { attempts, message: last })
}

/// Steps as a numbered list, one per line.
pub fn numbered_steps(steps: &[String]) -> String {
    steps.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect::<Vec<_>>().join("\n")
}

pub fn build_explanation_prompt(
    templates: &TemplateSet,
    category: &str,
    mode: WorkoutMode,
    entry: &ActionLexiconEntry,
    quality: Quality,
) -> Result<String> {
    let analysis = match quality {
        Quality::NonStandard => &templates.error_analysis,
        Quality::Standard => &templates.standard_review,
    }
    .render(&BTreeMap::new())?;
    let values = BTreeMap::from([
        ("category", category.to_string()),
        ("mode", mode_label(mode).to_string()),
        ("quality", quality.as_str().to_string()),
        ("steps", numbered_steps(&entry.steps)),
        ("instruction", entry.general_instruction.clone()),
        ("analysis", analysis.trim_end().to_string()),
    ]);
    templates.explanation.render(&values)
}

/// Generate one CoT explanation for a video. The reply is trimmed; an empty reply is an error.
#[allow(clippy::too_many_arguments)]
pub fn generate_cot_explanation(
    client: &dyn GenerationClient,
    templates: &TemplateSet,
    sample_id: &str,
    media: &str,
    category: &str,
    mode: WorkoutMode,
    entry: &ActionLexiconEntry,
    quality: Quality,
) -> Result<GeneratedExplanation> {
    entry.validate()?;
    let prompt = build_explanation_prompt(templates, category, mode, entry, quality)?;
    let request = GenerationRequest {
        prompt: prompt.clone(),
        media: Some(media.into()),
        context: BTreeMap::from([
            ("task".into(), "explanation".into()),
            ("category".into(), category.into()),
            ("quality".into(), quality.as_str().into()),
            ("steps".into(), entry.steps.join("\n")),
        ]),
    };
    let reply = client.generate(&request)?;
    let text = reply.trim().to_string();
    if text.is_empty() {
        return Err(EfaError::EmptyResponse { client: client.id() });
    }
    Ok(GeneratedExplanation {
        text,
        call: CallRecord {
            task: "explanation".into(),
            subject: sample_id.into(),
            client: client.id(),
            attempt: 1,
            prompt_sha256: sha256_hex(&prompt),
            response_sha256: sha256_hex(&reply),
        },
    })
}
