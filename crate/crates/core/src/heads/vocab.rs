//! Word-level vocabulary built from the training explanations.
//!
//! Tokenization lowercases, splits on whitespace and peels every ASCII
//! punctuation character off into its own token, so `"Keep it, straight."`
//! becomes `keep it , straight .`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_string, EfaError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];
const FILE_HEADER: &str = "#efa-vocab v1";

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if c.is_ascii_punctuation() {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
                out.push(c.to_string());
            } else {
                current.extend(c.to_lowercase());
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// Inverse of [`tokenize`] up to case: punctuation attaches to the preceding word.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for t in tokens {
        let t = t.as_ref();
        let attach = t.chars().count() == 1 && t.chars().all(|c| c.is_ascii_punctuation());
        if !out.is_empty() && !attach {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = EfaError;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Full token list, reserved tokens first.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(EfaError::parse("vocabulary", format!("must start with {}", RESERVED.join(", "))));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(EfaError::parse("vocabulary", format!("invalid token {t:?} at line {}", i + 2)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(EfaError::parse("vocabulary", format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Every token seen in `texts`, most frequent first, ties in lexicographic order.
    pub fn build<S: AsRef<str>>(texts: &[S]) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for t in tokenize(text.as_ref()) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(t, _)| !RESERVED.contains(&t.as_str())).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED.iter().map(|s| s.to_string()).chain(ranked.into_iter().map(|(t, _)| t)).collect();
        Self::from_tokens(tokens).expect("built vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens.get(id).map(String::as_str).ok_or(EfaError::TokenOutOfVocabulary { id, size: self.tokens.len() })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    /// `[BOS, tokens.., EOS]`, truncated so the body fits in `max_body` tokens.
    pub fn encode_target(&self, text: &str, max_body: usize) -> Vec<usize> {
        let mut ids = vec![BOS];
        ids.extend(self.encode(text).into_iter().take(max_body));
        ids.push(EOS);
        ids
    }

    /// Tokens up to the first EOS, skipping PAD and BOS.
    pub fn decode_tokens(&self, ids: &[usize]) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => {}
                _ => out.push(self.token(id)?.to_string()),
            }
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        Ok(detokenize(&self.decode_tokens(ids)?))
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::from(FILE_HEADER);
        s.push('\n');
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse_file(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim_end) != Some(FILE_HEADER) {
            return Err(EfaError::parse("vocabulary", format!("missing header {FILE_HEADER:?}")));
        }
        Self::from_tokens(lines.map(|l| l.trim_end_matches('\r').to_string()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_file_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_file(&read_to_string(path)?)
    }
}
