//! Run configuration: one TOML file, dotted-key overrides, one root seed.
//!
//! Every random stream in a run is derived from `seed`:
//! model init `derive_seed(seed, "model")`, encoders `derive_seed(seed, "encoder")`,
//! training order `derive_seed(seed, "train")`, and both the split and the
//! synthetic generator use `seed` itself.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::AnnotateConfig;
use crate::data::SyntheticSpec;
use crate::encoders::EncoderConfig;
use crate::error::{read_to_string, write_string, EfaError, Result};
use crate::heads::DecodeMode;
use crate::model::ModelConfig;
use crate::params::derive_seed;
use crate::training::TrainConfig;

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub decode: DecodeMode,
    /// Which split `eval` scores by default.
    pub split: String,
    /// Directory with `causal.txt` / `corrective.txt`; the built-in lists when unset.
    pub keywords_dir: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { decode: DecodeMode::Greedy, split: "test".into(), keywords_dir: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub synthetic: SyntheticSpec,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub annotate: AnnotateConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, context: &str) -> Result<Self> {
        Self::from_value(text.parse::<toml::Table>().map_err(|e| EfaError::Config(format!("{context}: {e}")))?, context)
    }

    /// Parse `path` (or start from defaults), apply `key=value` overrides and
    /// fill every derived seed. Unknown keys anywhere are rejected.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let (mut table, context) = match path {
            Some(p) => {
                let text = read_to_string(p).map_err(|e| EfaError::Config(e.to_string()))?;
                let table = text.parse::<toml::Table>().map_err(|e| EfaError::Config(format!("{}: {e}", p.display())))?;
                (table, p.display().to_string())
            }
            None => (toml::Table::new(), "defaults".to_string()),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_value(table, &context)
    }

    fn from_value(table: toml::Table, context: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::Value::Table(table.clone()).try_into().map_err(|e| EfaError::Config(format!("{context}: {e}")))?;
        // Unit enum variants accept stray keys, so compare against what was kept.
        let kept = toml::Table::try_from(&cfg).expect("run config serializes");
        if let Some(key) = unknown_key(&table, &kept, "") {
            return Err(EfaError::Config(format!("{context}: unknown key `{key}`")));
        }
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Push the root seed into every component.
    pub fn resolve(&mut self) {
        self.synthetic.seed = self.seed;
        self.encoder.seed = derive_seed(self.seed, "encoder");
        self.train.seed = derive_seed(self.seed, "train");
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, "model")
    }

    pub fn split_seed(&self) -> u64 {
        self.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.model.decoder.validate(self.model.model_dim)?;
        if self.model.model_dim == 0 || self.model.heads == 0 || !self.model.model_dim.is_multiple_of(self.model.heads) {
            return Err(EfaError::Config(format!(
                "model.model_dim ({}) must be a positive multiple of model.heads ({})",
                self.model.model_dim, self.model.heads
            )));
        }
        if !["train", "val", "test"].contains(&self.eval.split.as_str()) {
            return Err(EfaError::Config(format!("eval.split must be train, val or test, not `{}`", self.eval.split)));
        }
        if let DecodeMode::Beam { width: 0 } = self.eval.decode {
            return Err(EfaError::Config("eval.decode.width must be at least 1".into()));
        }
        self.annotate.validate()
    }

    /// The fully resolved configuration. Derived seeds are not written; they
    /// follow from `seed`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Write `config.resolved.toml` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        write_string(&path, &self.to_toml())?;
        Ok(path)
    }
}

fn unknown_key(given: &toml::Table, kept: &toml::Table, prefix: &str) -> Option<String> {
    given.iter().find_map(|(k, v)| {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, kept.get(k)) {
            (_, None) => Some(path),
            (toml::Value::Table(g), Some(toml::Value::Table(t))) => unknown_key(g, t, &path),
            _ => None,
        }
    })
}

/// Set `a.b.c=value` inside `table`. The value is read as a TOML literal and
/// falls back to a bare string, so `eval.split=val` and `train.lr=3e-3` both work.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| EfaError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(EfaError::Config(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, parents) = path.split_last().expect("path is non-empty");
    let mut cursor = table;
    for (i, part) in parents.iter().enumerate() {
        let entry = cursor.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor =
            entry.as_table_mut().ok_or_else(|| EfaError::Config(format!("override `{key}`: `{}` is not a table", path[..=i].join("."))))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}
