//! Pre-norm transformer decoder that writes the explanation token by token,
//! attending causally to its own prefix and fully to the fused video tokens.

use serde::{Deserialize, Serialize};

use super::vocab::{BOS, EOS, PAD, UNK};
use crate::autograd::{Graph, NodeId};
use crate::error::{EfaError, Result};
use crate::fusion::{cross_attention, AttentionParams, Linear};
use crate::params::{Initializer, ParamId, ParamStore};
use crate::tensor::{log_sum_exp, Matrix};

const EMBEDDING_INIT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of the model width.
    pub ffn_mult: usize,
    /// Maximum number of generated tokens, end token included.
    pub max_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 8, ffn_mult: 4, max_len: 160 }
    }
}

impl DecoderConfig {
    pub fn validate(&self, model_dim: usize) -> Result<()> {
        if self.layers == 0 || self.ffn_mult == 0 || self.max_len == 0 {
            return Err(EfaError::Config("decoder layers, ffn_mult and max_len must be at least 1".into()));
        }
        if self.heads == 0 || !model_dim.is_multiple_of(self.heads) {
            return Err(EfaError::Config(format!("decoder heads {} must divide model_dim {model_dim}", self.heads)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecodeMode {
    #[default]
    Greedy,
    Beam {
        width: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    fn register(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.register(format!("{prefix}.gamma"), Matrix::filled(1, dim, 1.0), false)?,
            beta: store.register(format!("{prefix}.beta"), Matrix::zeros(1, dim), false)?,
        })
    }

    fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderLayer {
    norm_self: LayerNorm,
    self_attn: AttentionParams,
    norm_cross: LayerNorm,
    cross_attn: AttentionParams,
    norm_ffn: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    config: DecoderConfig,
    model_dim: usize,
    vocab_size: usize,
    token_embedding: ParamId,
    position_embedding: ParamId,
    layers: Vec<DecoderLayer>,
    final_norm: LayerNorm,
    output: Linear,
}

/// A finished or truncated hypothesis: generated ids (no begin token) and
/// their summed log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

impl Decoder {
    pub fn register(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        config: &DecoderConfig,
        model_dim: usize,
        vocab_size: usize,
    ) -> Result<Self> {
        config.validate(model_dim)?;
        if vocab_size <= UNK {
            return Err(EfaError::Config(format!("vocabulary of {vocab_size} tokens has no room for words")));
        }
        let d = model_dim;
        let token_embedding = store.register(format!("{prefix}.token_embedding"), init.uniform(vocab_size, d, EMBEDDING_INIT), true)?;
        let position_embedding =
            store.register(format!("{prefix}.position_embedding"), init.uniform(config.max_len + 1, d, EMBEDDING_INIT), true)?;
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("{prefix}.layers.{l}");
                Ok(DecoderLayer {
                    norm_self: LayerNorm::register(store, &format!("{p}.norm_self"), d)?,
                    self_attn: AttentionParams::register(store, init, &format!("{p}.self_attn"), d, config.heads)?,
                    norm_cross: LayerNorm::register(store, &format!("{p}.norm_cross"), d)?,
                    cross_attn: AttentionParams::register(store, init, &format!("{p}.cross_attn"), d, config.heads)?,
                    norm_ffn: LayerNorm::register(store, &format!("{p}.norm_ffn"), d)?,
                    ffn_in: Linear::register(store, init, &format!("{p}.ffn_in"), d, d * config.ffn_mult)?,
                    ffn_out: Linear::register(store, init, &format!("{p}.ffn_out"), d * config.ffn_mult, d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::register(store, &format!("{prefix}.final_norm"), d)?;
        let output = Linear::register(store, init, &format!("{prefix}.output"), d, vocab_size)?;
        Ok(Self { config: config.clone(), model_dim, vocab_size, token_embedding, position_embedding, layers, final_norm, output })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Logits for every prefix of `tokens`: row `i` scores the token that
    /// follows `tokens[..=i]`.
    pub fn forward(&self, g: &mut Graph, fused: NodeId, tokens: &[usize]) -> Result<NodeId> {
        let n = tokens.len();
        if n == 0 {
            return Err(EfaError::InvalidArgument("decoder needs at least one input token".into()));
        }
        if n > self.config.max_len + 1 {
            return Err(EfaError::InvalidArgument(format!("prefix of {n} tokens exceeds max_len {}", self.config.max_len)));
        }
        if g.shape(fused).1 != self.model_dim {
            return Err(EfaError::Shape(format!("decoder expects width {}, got {}", self.model_dim, g.shape(fused).1)));
        }
        let table = g.param(self.token_embedding);
        let positions = g.param(self.position_embedding);
        let tok = g.gather(table, tokens)?;
        let pos_ids: Vec<usize> = (0..n).collect();
        let pos = g.gather(positions, &pos_ids)?;
        let mut x = g.add(tok, pos)?;
        for layer in &self.layers {
            let h = layer.norm_self.forward(g, x)?;
            let a = cross_attention(g, &layer.self_attn, h, h, true)?;
            x = g.add(x, a.output)?;
            let h = layer.norm_cross.forward(g, x)?;
            let a = cross_attention(g, &layer.cross_attn, h, fused, false)?;
            x = g.add(x, a.output)?;
            let h = layer.norm_ffn.forward(g, x)?;
            let h = layer.ffn_in.forward(g, h)?;
            let h = g.gelu(h);
            let h = layer.ffn_out.forward(g, h)?;
            x = g.add(x, h)?;
        }
        let x = self.final_norm.forward(g, x)?;
        self.output.forward(g, x)
    }

    /// For a target `[BOS, w1, .., EOS]` of length `L`, the `L - 1` logit rows
    /// used for teacher forcing. Row `i` predicts `target[i + 1]`.
    pub fn teacher_forced_logits(&self, g: &mut Graph, fused: NodeId, target: &[usize]) -> Result<NodeId> {
        if target.len() < 2 || target[0] != BOS {
            return Err(EfaError::InvalidArgument("target must start with the begin token and hold one more token".into()));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= self.vocab_size) {
            return Err(EfaError::TokenOutOfVocabulary { id: bad, size: self.vocab_size });
        }
        self.forward(g, fused, &target[..target.len() - 1])
    }

    /// Log-probabilities of the next token after `[BOS] + generated`.
    pub fn next_log_probs(&self, store: &ParamStore, fused: &Matrix, generated: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let f = g.input(fused.clone());
        let mut prefix = Vec::with_capacity(generated.len() + 1);
        prefix.push(BOS);
        prefix.extend_from_slice(generated);
        let logits = self.forward(&mut g, f, &prefix)?;
        let value = g.value(logits);
        let row = value.row(value.rows() - 1);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(EfaError::NonFinite("decoder logits".into()));
        }
        let lse = log_sum_exp(row);
        Ok(row.iter().map(|v| v - lse).collect())
    }

    /// Summed log-probability of `generated` (no begin token) under teacher forcing.
    pub fn sequence_log_prob(&self, store: &ParamStore, fused: &Matrix, generated: &[usize]) -> Result<f64> {
        if generated.is_empty() {
            return Ok(0.0);
        }
        let mut g = Graph::new(store);
        let f = g.input(fused.clone());
        let mut target = vec![BOS];
        target.extend_from_slice(generated);
        let logits = self.teacher_forced_logits(&mut g, f, &target)?;
        let value = g.value(logits);
        Ok(generated
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let row = value.row(i);
                row[t] - log_sum_exp(row)
            })
            .sum())
    }

    pub fn decode(&self, store: &ParamStore, fused: &Matrix, mode: DecodeMode) -> Result<Hypothesis> {
        match mode {
            DecodeMode::Greedy => self.greedy(store, fused),
            DecodeMode::Beam { width } => self.beam(store, fused, width),
        }
    }

    /// Most likely allowed token at each step; ties go to the lowest id.
    pub fn greedy(&self, store: &ParamStore, fused: &Matrix) -> Result<Hypothesis> {
        let mut tokens = Vec::new();
        let mut log_prob = 0.0;
        while tokens.len() < self.config.max_len {
            let lp = self.next_log_probs(store, fused, &tokens)?;
            let (best, score) = allowed(&lp).fold((usize::MAX, f64::NEG_INFINITY), |acc, (t, s)| if s > acc.1 { (t, s) } else { acc });
            tokens.push(best);
            log_prob += score;
            if best == EOS {
                break;
            }
        }
        Ok(Hypothesis { tokens, log_prob })
    }

    /// Standard beam search. Each step expands every live hypothesis by every
    /// allowed token, keeps the `width` best candidates (stable order on
    /// ties), and retires those ending in EOS. Stops once the best finished
    /// score is at least the best live score, since scores never increase.
    pub fn beam(&self, store: &ParamStore, fused: &Matrix, width: usize) -> Result<Hypothesis> {
        if width == 0 {
            return Err(EfaError::InvalidArgument("beam width must be at least 1".into()));
        }
        let mut live = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0 }];
        let mut finished: Vec<Hypothesis> = Vec::new();
        for _ in 0..self.config.max_len {
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            for (b, hyp) in live.iter().enumerate() {
                let lp = self.next_log_probs(store, fused, &hyp.tokens)?;
                candidates.extend(allowed(&lp).map(|(t, s)| (hyp.log_prob + s, b, t)));
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut next = Vec::with_capacity(width);
            for &(score, b, t) in candidates.iter().take(width) {
                let mut tokens = live[b].tokens.clone();
                tokens.push(t);
                let hyp = Hypothesis { tokens, log_prob: score };
                if t == EOS {
                    finished.push(hyp);
                } else {
                    next.push(hyp);
                }
            }
            live = next;
            let best_finished = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if live.is_empty() || best_finished >= best_live {
                break;
            }
        }
        let mut best: Option<Hypothesis> = None;
        for h in finished.into_iter().chain(live) {
            if best.as_ref().is_none_or(|b| h.log_prob > b.log_prob) {
                best = Some(h);
            }
        }
        Ok(best.expect("beam search keeps at least one hypothesis"))
    }
}

fn allowed(log_probs: &[f64]) -> impl Iterator<Item = (usize, f64)> + '_ {
    log_probs.iter().copied().enumerate().filter(|&(t, _)| t != PAD && t != BOS)
}
