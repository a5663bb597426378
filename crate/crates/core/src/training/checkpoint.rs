//! Versioned JSON checkpoints. Floats are written with shortest round-trip
//! formatting, so a reload reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainState};
use crate::data::ActionLexiconEntry;
use crate::encoders::EncoderConfig;
use crate::error::{read_to_string, write_string, EfaError, Result};
use crate::heads::Vocabulary;
use crate::model::{EfaModel, ModelConfig, ModelDims};
use crate::tensor::Matrix;

pub const CHECKPOINT_FORMAT: &str = "efa-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub model: u64,
    pub encoder: u64,
    pub train: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub dims: ModelDims,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub seeds: Seeds,
    pub vocabulary: Vocabulary,
    pub lexicon: Vec<ActionLexiconEntry>,
    pub params: BTreeMap<String, Matrix>,
    pub state: Option<TrainState>,
}

impl Checkpoint {
    pub fn capture(model: &EfaModel, encoder: &EncoderConfig, train: &TrainConfig, state: Option<&TrainState>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            dims: model.dims.clone(),
            encoder: encoder.clone(),
            train: train.clone(),
            seeds: Seeds { model: model.seed, encoder: encoder.seed, train: train.seed },
            vocabulary: model.vocab.clone(),
            lexicon: model.lexicon.values().cloned().collect(),
            params: model.store.to_named(),
            state: state.cloned(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let header: serde_json::Value = serde_json::from_str(text).map_err(|e| EfaError::parse(context, e))?;
        if header.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(EfaError::parse(context, format!("not an {CHECKPOINT_FORMAT} file")));
        }
        let version = header.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(EfaError::VersionMismatch { found: version as u32, expected: CHECKPOINT_VERSION });
        }
        serde_json::from_value(header).map_err(|e| EfaError::parse(context, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig { seed: self.seeds.encoder, ..self.encoder.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seeds.train, ..self.train.clone() }
    }

    /// Rebuild the model and load the saved parameters into it.
    pub fn restore_model(&self) -> Result<EfaModel> {
        let lexicon = self.lexicon.iter().map(|e| (e.category_id, e.clone())).collect();
        let mut model = EfaModel::new(&self.model, self.dims.clone(), self.vocabulary.clone(), lexicon, self.seeds.model)?;
        model.store.load_values(&self.params)?;
        Ok(model)
    }

    /// Load parameters into an existing model; shapes and names must match.
    pub fn load_into(&self, model: &mut EfaModel) -> Result<()> {
        model.store.load_values(&self.params)
    }
}
