//! Explanation corpus statistics.
//!
//! - words: whitespace-separated tokens containing at least one alphanumeric character
//! - sentences: pieces between `.`, `!` and `?` that contain an alphanumeric character
//! - vocabulary: distinct words after dropping non-alphanumeric characters and lowercasing
//! - reasoning steps / suggestions: non-overlapping occurrences of the causal /
//!   corrective keyword phrases, matched on whole normalized words

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, EfaError, Result};

const DEFAULT_CAUSAL: &str = include_str!("../../config/keywords/causal.txt");
const DEFAULT_CORRECTIVE: &str = include_str!("../../config/keywords/corrective.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeywordLists {
    pub causal: Vec<Vec<String>>,
    pub corrective: Vec<Vec<String>>,
}

impl Default for KeywordLists {
    fn default() -> Self {
        Self { causal: parse_keywords(DEFAULT_CAUSAL), corrective: parse_keywords(DEFAULT_CORRECTIVE) }
    }
}

impl KeywordLists {
    /// Read `causal.txt` and `corrective.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            causal: parse_keywords(&read_to_string(&dir.join("causal.txt"))?),
            corrective: parse_keywords(&read_to_string(&dir.join("corrective.txt"))?),
        })
    }
}

/// One phrase per line; blank lines and `#` comments are ignored.
pub fn parse_keywords(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split('#').next().unwrap_or("")).map(normalized_words).filter(|p| !p.is_empty()).collect()
}

fn normalized_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect()
}

fn count_phrase(words: &[String], phrase: &[String]) -> usize {
    let (mut i, mut n) = (0, 0);
    while i + phrase.len() <= words.len() {
        if words[i..i + phrase.len()] == *phrase {
            n += 1;
            i += phrase.len();
        } else {
            i += 1;
        }
    }
    n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub avg_words: f64,
    pub avg_sentences: f64,
    pub vocab_size: usize,
    pub avg_reasoning_steps: f64,
    pub avg_suggestions: f64,
}

pub fn corpus_statistics<S: AsRef<str>>(texts: &[S], keywords: &KeywordLists) -> Result<CorpusStats> {
    if texts.is_empty() {
        return Err(EfaError::InvalidArgument("no texts to summarize".into()));
    }
    let mut words = 0usize;
    let mut sentences = 0usize;
    let mut reasoning = 0usize;
    let mut suggestions = 0usize;
    let mut vocab = BTreeSet::new();
    for text in texts {
        let text = text.as_ref();
        words += text.split_whitespace().filter(|w| w.chars().any(char::is_alphanumeric)).count();
        sentences += text.split(['.', '!', '?']).filter(|s| s.chars().any(char::is_alphanumeric)).count();
        let normalized = normalized_words(text);
        reasoning += keywords.causal.iter().map(|p| count_phrase(&normalized, p)).sum::<usize>();
        suggestions += keywords.corrective.iter().map(|p| count_phrase(&normalized, p)).sum::<usize>();
        vocab.extend(normalized);
    }
    let n = texts.len() as f64;
    Ok(CorpusStats {
        samples: texts.len(),
        avg_words: words as f64 / n,
        avg_sentences: sentences as f64 / n,
        vocab_size: vocab.len(),
        avg_reasoning_steps: reasoning as f64 / n,
        avg_suggestions: suggestions as f64 / n,
    })
}
