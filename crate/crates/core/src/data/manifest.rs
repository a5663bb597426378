//! Dataset manifest schema, loading and validation.
//!
//! A manifest is a JSON document:
//!
//! ```text
//! {
//!   "format": "efa-manifest",
//!   "version": 1,
//!   "num_categories": 2,
//!   "lexicon": [ { "category_id": 0, "category_name": "...",
//!                  "steps": [5 strings], "general_instruction": "..." }, ... ],
//!   "records": [ { "sample_id": "...", "media_ref": { "kind": "features", "path": "..." },
//!                  "category_id": 0, "category_name": "...", "workout_mode": "manual",
//!                  "workout_type": "...", "quality": "standard", "viewpoint": "front",
//!                  "duration_s": 4.2, "frame_count": 101, "cot_text": "..." }, ... ]
//! }
//! ```
//!
//! `lexicon` may instead be `{ "path": "lexicon.json" }`, pointing at a
//! lexicon file `{ "format": "efa-lexicon", "version": 1, "entries": [...] }`.
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_string, EfaError, Result};

pub const MANIFEST_FORMAT: &str = "efa-manifest";
pub const LEXICON_FORMAT: &str = "efa-lexicon";
pub const SCHEMA_VERSION: u32 = 1;
pub const STEPS_PER_ENTRY: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkoutMode {
    Manual,
    Apparatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Standard,
    NonStandard,
}

impl Quality {
    /// Target for the quality head, which predicts the probability of `Standard`.
    pub fn target(self) -> f64 {
        match self {
            Self::Standard => 1.0,
            Self::NonStandard => 0.0,
        }
    }

    pub fn from_probability(p: f64) -> Self {
        if p >= 0.5 {
            Self::Standard
        } else {
            Self::NonStandard
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::NonStandard => "non_standard",
        }
    }
}

impl std::str::FromStr for Quality {
    type Err = EfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "non_standard" | "non-standard" => Ok(Self::NonStandard),
            other => Err(EfaError::InvalidArgument(format!("unknown quality label `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Viewpoint {
    Front,
    Side,
    Back,
}

/// Where a sample's visual content lives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MediaRef {
    /// A precomputed feature fixture.
    Features { path: PathBuf },
    /// A directory of extracted frame files, read in lexicographic order.
    Frames { dir: PathBuf },
    /// Opaque handle resolved by an external encoder adapter.
    Handle { id: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub sample_id: String,
    pub media_ref: MediaRef,
    pub category_id: usize,
    pub category_name: String,
    pub workout_mode: WorkoutMode,
    pub workout_type: String,
    pub quality: Quality,
    pub viewpoint: Viewpoint,
    pub duration_s: f64,
    pub frame_count: usize,
    pub cot_text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionLexiconEntry {
    pub category_id: usize,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub category_name: String,
    pub steps: Vec<String>,
    pub general_instruction: String,
}

impl ActionLexiconEntry {
    pub fn validate(&self) -> Result<()> {
        let record = format!("lexicon[{}]", self.category_id);
        if self.steps.len() != STEPS_PER_ENTRY {
            return Err(EfaError::schema(record, "steps", format!("expected exactly {STEPS_PER_ENTRY} steps, found {}", self.steps.len())));
        }
        if let Some(i) = self.steps.iter().position(|s| s.trim().is_empty()) {
            return Err(EfaError::schema(record, format!("steps[{i}]"), "empty step"));
        }
        if self.general_instruction.trim().is_empty() {
            return Err(EfaError::schema(record, "general_instruction", "empty instruction"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconFile {
    pub format: String,
    pub version: u32,
    pub entries: Vec<ActionLexiconEntry>,
}

impl LexiconFile {
    pub fn new(entries: Vec<ActionLexiconEntry>) -> Self {
        Self { format: LEXICON_FORMAT.into(), version: SCHEMA_VERSION, entries }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let file: Self = serde_json::from_str(&text).map_err(|e| EfaError::parse(path.display().to_string(), e))?;
        if file.format != LEXICON_FORMAT {
            return Err(EfaError::parse(path.display().to_string(), format!("format is `{}`", file.format)));
        }
        if file.version != SCHEMA_VERSION {
            return Err(EfaError::VersionMismatch { found: file.version, expected: SCHEMA_VERSION });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| EfaError::parse("lexicon", e))?;
        write_string(path, &(text + "\n"))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LexiconSource {
    Inline(Vec<ActionLexiconEntry>),
    File { path: PathBuf },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    format: String,
    version: u32,
    num_categories: usize,
    lexicon: LexiconSource,
    records: Vec<SampleRecord>,
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    format: &'static str,
    version: u32,
    num_categories: usize,
    lexicon: Vec<&'a ActionLexiconEntry>,
    records: &'a [SampleRecord],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub lexicon: BTreeMap<usize, ActionLexiconEntry>,
    pub num_categories: usize,
    /// Directory that relative media paths resolve against. Not serialized.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Build and validate a manifest from parts.
    pub fn new(records: Vec<SampleRecord>, lexicon: Vec<ActionLexiconEntry>, num_categories: usize) -> Result<Self> {
        let mut map = BTreeMap::new();
        for entry in lexicon {
            entry.validate()?;
            let id = entry.category_id;
            if map.insert(id, entry).is_some() {
                return Err(EfaError::schema(format!("lexicon[{id}]"), "category_id", "duplicate lexicon entry"));
            }
        }
        let manifest = Self { records, lexicon: map, num_categories, base_dir: PathBuf::new() };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_categories != self.lexicon.len() {
            return Err(EfaError::schema(
                "manifest",
                "num_categories",
                format!("{} declared but {} lexicon entries", self.num_categories, self.lexicon.len()),
            ));
        }
        if let Some(&bad) = self.lexicon.keys().find(|&&id| id >= self.num_categories) {
            return Err(EfaError::schema(format!("lexicon[{bad}]"), "category_id", "outside [0, num_categories)"));
        }
        let mut seen = BTreeSet::new();
        for r in &self.records {
            let id = r.sample_id.as_str();
            if id.trim().is_empty() {
                return Err(EfaError::schema("<unnamed>", "sample_id", "empty sample id"));
            }
            if !seen.insert(id) {
                return Err(EfaError::schema(id, "sample_id", "duplicate sample id"));
            }
            if !self.lexicon.contains_key(&r.category_id) {
                return Err(EfaError::MissingLexicon { category_id: r.category_id });
            }
            if r.frame_count == 0 {
                return Err(EfaError::schema(id, "frame_count", "must be at least 1"));
            }
            if !(r.duration_s.is_finite() && r.duration_s > 0.0) {
                return Err(EfaError::schema(id, "duration_s", "must be a positive number of seconds"));
            }
            if r.cot_text.trim().is_empty() {
                return Err(EfaError::schema(id, "cot_text", "explanation text is empty"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.sample_id == sample_id)
    }

    pub fn lexicon_entry(&self, category_id: usize) -> Result<&ActionLexiconEntry> {
        self.lexicon.get(&category_id).ok_or(EfaError::MissingLexicon { category_id })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn parse(text: &str, base_dir: &Path, context: &str) -> Result<Self> {
        let file: ManifestFile = serde_json::from_str(text).map_err(|e| EfaError::parse(context, e))?;
        if file.format != MANIFEST_FORMAT {
            return Err(EfaError::parse(context, format!("format is `{}`, expected `{MANIFEST_FORMAT}`", file.format)));
        }
        if file.version != SCHEMA_VERSION {
            return Err(EfaError::VersionMismatch { found: file.version, expected: SCHEMA_VERSION });
        }
        let entries = match file.lexicon {
            LexiconSource::Inline(entries) => entries,
            LexiconSource::File { path } => {
                let path = if path.is_absolute() { path } else { base_dir.join(path) };
                LexiconFile::load(&path)?.entries
            }
        };
        let mut manifest = Self::new(file.records, entries, file.num_categories)?;
        manifest.base_dir = base_dir.to_path_buf();
        Ok(manifest)
    }

    /// Serialize with the lexicon inlined.
    pub fn to_json(&self) -> String {
        let out = ManifestOut {
            format: MANIFEST_FORMAT,
            version: SCHEMA_VERSION,
            num_categories: self.num_categories,
            lexicon: self.lexicon.values().collect(),
            records: &self.records,
        };
        serde_json::to_string_pretty(&out).expect("manifest serialization is infallible") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_json())
    }
}

/// Read and validate a manifest file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::parse(&text, &base, &path.display().to_string())
}
