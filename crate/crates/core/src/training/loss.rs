//! Multi-task objective `L = lambda * L_c + L_q + L_t`.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::error::{EfaError, Result};
use crate::model::ModelOutputs;
use crate::tensor::{log_sum_exp, Matrix};

/// Probabilities are clamped this far from 0 and 1 before taking logs.
const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the category loss.
    pub lambda: f64,
    /// Label smoothing on the explanation tokens.
    pub label_smoothing: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 3.0, label_smoothing: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(EfaError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(EfaError::Config(format!("label_smoothing must be in [0, 1), got {}", self.label_smoothing)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub category: f64,
    pub quality: f64,
    pub text: f64,
}

/// Ground truth for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTargets {
    pub category: usize,
    /// 1 for standard, 0 for non-standard.
    pub quality: f64,
    /// `[BOS, w1, .., EOS]`.
    pub tokens: Vec<usize>,
}

fn smoothed_ce(row: &[f64], target: usize, smoothing: f64) -> f64 {
    let lse = log_sum_exp(row);
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    lse - (1.0 - smoothing) * row[target] - smoothing * mean
}

/// Value-level objective. `token_logits` holds one row per predicted token
/// and `token_targets` the matching next-token ids.
pub fn loss_total(
    category_logits: &[f64],
    quality_prob: f64,
    token_logits: &Matrix,
    category: usize,
    quality: f64,
    token_targets: &[usize],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    if category_logits.iter().chain(token_logits.as_slice()).any(|v| !v.is_finite()) {
        return Err(EfaError::NonFinite("loss logits".into()));
    }
    if !(0.0..=1.0).contains(&quality_prob) || !(0.0..=1.0).contains(&quality) {
        return Err(EfaError::InvalidArgument(format!("quality probability {quality_prob} or target {quality} outside [0, 1]")));
    }
    if category >= category_logits.len() {
        return Err(EfaError::InvalidArgument(format!("category {category} >= {}", category_logits.len())));
    }
    if token_targets.len() != token_logits.rows() || token_targets.is_empty() {
        return Err(EfaError::Shape(format!("{} token targets for {} logit rows", token_targets.len(), token_logits.rows())));
    }
    if let Some(&bad) = token_targets.iter().find(|&&t| t >= token_logits.cols()) {
        return Err(EfaError::TokenOutOfVocabulary { id: bad, size: token_logits.cols() });
    }
    let l_c = smoothed_ce(category_logits, category, 0.0);
    let p = quality_prob.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let l_q = -(quality * p.ln() + (1.0 - quality) * (1.0 - p).ln());
    let l_t = token_targets.iter().enumerate().map(|(i, &t)| smoothed_ce(token_logits.row(i), t, weights.label_smoothing)).sum::<f64>()
        / token_targets.len() as f64;
    Ok(LossBreakdown { total: weights.lambda * l_c + (l_q + l_t), category: l_c, quality: l_q, text: l_t })
}

/// Graph nodes of the objective for one sample.
pub struct LossNodes {
    pub total: NodeId,
    pub category: NodeId,
    pub quality: NodeId,
    pub text: NodeId,
}

impl LossNodes {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let v = |n: NodeId| g.value(n)[(0, 0)];
        LossBreakdown { total: v(self.total), category: v(self.category), quality: v(self.quality), text: v(self.text) }
    }
}

/// Differentiable objective on top of a model forward pass. The quality term
/// works on the logit for numerical stability.
pub fn loss_graph(
    g: &mut Graph,
    outputs: &ModelOutputs,
    token_logits: NodeId,
    targets: &SampleTargets,
    weights: &LossWeights,
) -> Result<LossNodes> {
    weights.validate()?;
    let category = g.cross_entropy(outputs.category_logits, &[targets.category], 0.0)?;
    let quality = g.bce_with_logits(outputs.quality_logit, targets.quality)?;
    let text = g.cross_entropy(token_logits, &targets.tokens[1..], weights.label_smoothing)?;
    let weighted = g.scale(category, weights.lambda);
    let rest = g.add(quality, text)?;
    let total = g.add(weighted, rest)?;
    Ok(LossNodes { total, category, quality, text })
}
