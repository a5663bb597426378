//! Category, quality and explanation heads on top of the fused video tokens.

pub mod decoder;
pub mod vocab;

use serde::{Deserialize, Serialize};

pub use decoder::{DecodeMode, Decoder, DecoderConfig, Hypothesis};
pub use vocab::{detokenize, tokenize, Vocabulary, BOS, EOS, PAD, UNK};

use crate::autograd::{Graph, NodeId};
use crate::error::{EfaError, Result};
use crate::fusion::Linear;
use crate::params::{Initializer, ParamStore};

/// Mean-pool over tokens, then `Linear -> GELU -> Linear`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead {
    pub hidden: Linear,
    pub output: Linear,
}

impl MlpHead {
    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
    ) -> Result<Self> {
        if in_dim == 0 || hidden == 0 || out_dim == 0 {
            return Err(EfaError::Config(format!("{prefix}: head widths must be at least 1")));
        }
        Ok(Self {
            hidden: Linear::register(store, init, &format!("{prefix}.hidden"), in_dim, hidden)?,
            output: Linear::register(store, init, &format!("{prefix}.output"), hidden, out_dim)?,
        })
    }

    /// `fused` is `N x d_m`; returns a `1 x out_dim` logit row.
    pub fn forward(&self, g: &mut Graph, fused: NodeId) -> Result<NodeId> {
        if g.shape(fused).0 == 0 {
            return Err(EfaError::Shape("cannot pool zero tokens".into()));
        }
        let pooled = g.mean_rows(fused);
        let h = self.hidden.forward(g, pooled)?;
        let h = g.gelu(h);
        self.output.forward(g, h)
    }
}

/// Everything the model says about one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessmentResult {
    /// Length `C`.
    pub category_logits: Vec<f64>,
    pub category: usize,
    /// Probability that the execution is standard.
    pub quality_prob: f64,
    /// Generated ids, ending in the end token unless cut at the length limit.
    pub explanation_ids: Vec<usize>,
    pub explanation: String,
}

impl AssessmentResult {
    pub fn is_standard(&self) -> bool {
        self.quality_prob >= 0.5
    }

    pub fn category_probabilities(&self) -> Vec<f64> {
        let lse = crate::tensor::log_sum_exp(&self.category_logits);
        self.category_logits.iter().map(|v| (v - lse).exp()).collect()
    }
}
