//! The assembled assessor: fusion module, category and quality heads, and the
//! explanation decoder, plus the text preparation each ablation needs.
//!
//! During training the lexicon entry of the ground-truth category conditions
//! the fusion. At inference the category is unknown, so category logits are
//! averaged over every lexicon entry; the winning category's entry then drives
//! the quality head and the decoder.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::data::ActionLexiconEntry;
use crate::encoders::{Encoders, TextFeatures};
use crate::error::{EfaError, Result};
use crate::features::FeatureMatrix;
use crate::fusion::{FusionConfig, FusionOutput, FusionParams, FusionVariant};
use crate::heads::{AssessmentResult, DecodeMode, Decoder, DecoderConfig, MlpHead, Vocabulary};
use crate::params::{Initializer, ParamStore};
use crate::tensor::{sigmoid, Matrix};

/// Structural and input ablations, one at a time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    WithoutGlobal,
    WithoutStep,
    QueryText,
    QueryVideo,
    Concatenate,
    Add,
    /// Text features are replaced by zeros before fusion.
    WithoutText,
    /// The five step strings are permuted per sample before encoding.
    ShuffledText,
}

impl Ablation {
    pub const ALL: [Ablation; 9] = [
        Self::None,
        Self::WithoutGlobal,
        Self::WithoutStep,
        Self::QueryText,
        Self::QueryVideo,
        Self::Concatenate,
        Self::Add,
        Self::WithoutText,
        Self::ShuffledText,
    ];

    pub fn fusion_variant(self) -> FusionVariant {
        match self {
            Self::WithoutGlobal => FusionVariant::WithoutGlobal,
            Self::WithoutStep => FusionVariant::WithoutStep,
            Self::QueryText => FusionVariant::QueryText,
            Self::QueryVideo => FusionVariant::QueryVideo,
            Self::Concatenate => FusionVariant::Concatenate,
            Self::Add => FusionVariant::Add,
            Self::None | Self::WithoutText | Self::ShuffledText => FusionVariant::Full,
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::None => "Full model",
            Self::WithoutGlobal => "w/o Global-Aware Fusion",
            Self::WithoutStep => "w/o Step-Aware Fusion",
            Self::QueryText => "Q-text",
            Self::QueryVideo => "Q-video",
            Self::Concatenate => "Concatenate",
            Self::Add => "Add",
            Self::WithoutText => "w/o text",
            Self::ShuffledText => "Shuffled text",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub fusion_depth: usize,
    pub sigma_init: f64,
    /// Hidden width of the category and quality MLPs.
    pub head_hidden: usize,
    pub ablation: Ablation,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_dim: 512,
            heads: 8,
            fusion_depth: 1,
            sigma_init: 1e-3,
            head_hidden: 512,
            ablation: Ablation::None,
            decoder: DecoderConfig::default(),
        }
    }
}

/// Sizes fixed by the data and encoders rather than chosen by the user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub visual_dim: usize,
    pub text_dim: usize,
    pub num_categories: usize,
    pub vocab_size: usize,
}

pub struct ModelOutputs {
    pub fusion: FusionOutput,
    /// `1 x C`.
    pub category_logits: NodeId,
    /// `1 x 1`; `sigmoid` of it is the probability of standard execution.
    pub quality_logit: NodeId,
}

#[derive(Clone, Debug)]
pub struct EfaModel {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub seed: u64,
    pub store: ParamStore,
    pub fusion: FusionParams,
    pub category_head: MlpHead,
    pub quality_head: MlpHead,
    pub decoder: Decoder,
    pub vocab: Vocabulary,
    pub lexicon: BTreeMap<usize, ActionLexiconEntry>,
}

impl EfaModel {
    /// Register every parameter, initialized from `seed`.
    pub fn new(
        config: &ModelConfig,
        dims: ModelDims,
        vocab: Vocabulary,
        lexicon: BTreeMap<usize, ActionLexiconEntry>,
        seed: u64,
    ) -> Result<Self> {
        if dims.vocab_size != vocab.len() {
            return Err(EfaError::Config(format!("vocab_size {} does not match the vocabulary ({} tokens)", dims.vocab_size, vocab.len())));
        }
        if dims.num_categories == 0 || lexicon.len() != dims.num_categories || lexicon.keys().any(|&c| c >= dims.num_categories) {
            return Err(EfaError::Config(format!("lexicon must hold exactly one entry per category 0..{}", dims.num_categories)));
        }
        for entry in lexicon.values() {
            entry.validate()?;
        }
        let fusion_config = FusionConfig {
            visual_dim: dims.visual_dim,
            text_dim: dims.text_dim,
            model_dim: config.model_dim,
            heads: config.heads,
            depth: config.fusion_depth,
            sigma_init: config.sigma_init,
            variant: config.ablation.fusion_variant(),
        };
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let fusion = FusionParams::register(&mut store, &mut init, "fusion", &fusion_config)?;
        let dm = config.model_dim;
        let category_head = MlpHead::register(&mut store, &mut init, "category_head", dm, config.head_hidden, dims.num_categories)?;
        let quality_head = MlpHead::register(&mut store, &mut init, "quality_head", dm, config.head_hidden, 1)?;
        let decoder = Decoder::register(&mut store, &mut init, "decoder", &config.decoder, dm, dims.vocab_size)?;
        Ok(Self { config: config.clone(), dims, seed, store, fusion, category_head, quality_head, decoder, vocab, lexicon })
    }

    pub fn num_categories(&self) -> usize {
        self.dims.num_categories
    }

    pub fn lexicon_entry(&self, category_id: usize) -> Result<&ActionLexiconEntry> {
        self.lexicon.get(&category_id).ok_or(EfaError::MissingLexicon { category_id })
    }

    /// Encode the text for one (sample, category) pair, applying text ablations.
    /// `sample_key` seeds the step permutation under [`Ablation::ShuffledText`].
    pub fn prepare_text(&self, encoders: &Encoders, entry: &ActionLexiconEntry, sample_key: &str) -> Result<TextFeatures> {
        match self.config.ablation {
            Ablation::ShuffledText => {
                let mut shuffled = entry.clone();
                let order = step_permutation(self.seed, sample_key, entry.steps.len());
                shuffled.steps = order.iter().map(|&i| entry.steps[i].clone()).collect();
                encoders.text_encode(&shuffled)
            }
            Ablation::WithoutText => {
                let t = encoders.text_encode(entry)?;
                Ok(TextFeatures {
                    steps: FeatureMatrix::new(Matrix::zeros(t.steps.rows(), t.steps.dim()))?,
                    global: FeatureMatrix::new(Matrix::zeros(1, t.global.dim()))?,
                })
            }
            _ => encoders.text_encode(entry),
        }
    }

    /// Prepared text for every category, in category order.
    pub fn prepare_all_text(&self, encoders: &Encoders, sample_key: &str) -> Result<Vec<TextFeatures>> {
        self.lexicon.values().map(|e| self.prepare_text(encoders, e, sample_key)).collect()
    }

    pub fn forward(&self, g: &mut Graph, video: &Matrix, text: &TextFeatures) -> Result<ModelOutputs> {
        let v = g.input(video.clone());
        let s = g.input(text.steps.as_matrix().clone());
        let t = g.input(text.global.as_matrix().clone());
        let fusion = self.fusion.fuse(g, v, s, t)?;
        let category_logits = self.category_head.forward(g, fusion.fused)?;
        let quality_logit = self.quality_head.forward(g, fusion.fused)?;
        Ok(ModelOutputs { fusion, category_logits, quality_logit })
    }

    /// Fused tokens, category logits and quality logit as plain values.
    pub fn forward_values(&self, video: &Matrix, text: &TextFeatures) -> Result<(Matrix, Vec<f64>, f64)> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, video, text)?;
        let logits = g.value(out.category_logits).as_slice().to_vec();
        let q = g.value(out.quality_logit)[(0, 0)];
        Ok((g.value(out.fusion.fused).clone(), logits, q))
    }

    /// Full inference from video tokens and per-category prepared text
    /// (`texts[c]` belongs to category `c`).
    pub fn assess(&self, video: &Matrix, texts: &[TextFeatures], mode: DecodeMode) -> Result<AssessmentResult> {
        let c = self.num_categories();
        if texts.len() != c {
            return Err(EfaError::InvalidArgument(format!("expected text for {c} categories, got {}", texts.len())));
        }
        if video.cols() != self.dims.visual_dim {
            return Err(EfaError::Shape(format!("video width {} != {}", video.cols(), self.dims.visual_dim)));
        }
        let mut sum = vec![0.0; c];
        let mut per_category = Vec::with_capacity(c);
        for text in texts {
            let (fused, logits, q) = self.forward_values(video, text)?;
            sum.iter_mut().zip(&logits).for_each(|(s, l)| *s += l);
            per_category.push((fused, q));
        }
        let category_logits: Vec<f64> = sum.iter().map(|s| s / c as f64).collect();
        if category_logits.iter().any(|v| !v.is_finite()) {
            return Err(EfaError::NonFinite("category logits".into()));
        }
        let category = Matrix::row_vector(category_logits.clone()).argmax_row(0);
        let (fused, quality_logit) = &per_category[category];
        let hyp = self.decoder.decode(&self.store, fused, mode)?;
        Ok(AssessmentResult {
            category_logits,
            category,
            quality_prob: sigmoid(*quality_logit),
            explanation: self.vocab.decode(&hyp.tokens)?,
            explanation_ids: hyp.tokens,
        })
    }

    /// Encode text for `sample_key` and assess.
    pub fn assess_with(&self, encoders: &Encoders, video: &Matrix, sample_key: &str, mode: DecodeMode) -> Result<AssessmentResult> {
        let texts = self.prepare_all_text(encoders, sample_key)?;
        self.assess(video, &texts, mode)
    }
}

/// Deterministic permutation of `n` items keyed by `(seed, key)`; never the
/// identity when `n > 1`.
pub fn step_permutation(seed: u64, key: &str, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::encoders::toy::fnv1a(seed, key.as_bytes()));
    order.shuffle(&mut rng);
    if n > 1 && order.iter().enumerate().all(|(i, &o)| i == o) {
        order.rotate_left(1);
    }
    order
}
