//! Multimodal fusion: bidirectional cross-attention in a global-aware and a
//! step-aware branch, merged by a sigmoid gate.
//!
//! All inputs are first projected to a shared model width `d_m`:
//!
//! ```text
//! global branch   Ftg* = Attn1(Ftg, Fv)  + s1 * Ftg
//!                 Fvg  = Attn2(Fv, Ftg*) + s2 * Fv
//! step branch     Fts* = Attn3(Fts, Fv)  + s3 * Fts
//!                 Fvs  = Attn4(Fv, Fts*) + s4 * Fv
//! gate            G    = sigmoid([Fvg, Fvs] Wg + bg)
//!                 Ff   = G * Fvg + (1 - G) * Fvs
//! ```
//!
//! `Attn(x, y)` is multi-head attention with queries from `x` and keys/values
//! from `y`, heads concatenated and mixed by an output matrix. `s1..s4` are
//! per-channel residual scales. No positional term is added here, so every
//! output is equivariant to permutations of the video tokens.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::error::{EfaError, Result};
use crate::params::{Initializer, ParamId, ParamStore};
use crate::tensor::Matrix;

/// Table VI style structural variants of the fusion module.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    #[default]
    Full,
    /// Drop the global branch: `Ff = Fvs`.
    WithoutGlobal,
    /// Drop the step branch: `Ff = Fvg`.
    WithoutStep,
    /// Text queries video only. Attn2/Attn4 are removed and the video side of
    /// each branch becomes `mean_rows(F_t*) + s * Fv`.
    QueryText,
    /// Video queries text only. Attn1/Attn3 are removed, so `F_t* = F_t`.
    QueryVideo,
    /// Replace the gate with a linear map of the concatenation.
    Concatenate,
    /// Replace the gate with `Fvg + Fvs`.
    Add,
}

impl FusionVariant {
    fn has_global(self) -> bool {
        self != Self::WithoutGlobal
    }

    fn has_step(self) -> bool {
        self != Self::WithoutStep
    }

    fn text_queries(self) -> bool {
        self != Self::QueryVideo
    }

    fn video_queries(self) -> bool {
        self != Self::QueryText
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub visual_dim: usize,
    pub text_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    /// Stacked bidirectional blocks per branch.
    pub depth: usize,
    pub sigma_init: f64,
    pub variant: FusionVariant,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { visual_dim: 512, text_dim: 512, model_dim: 512, heads: 8, depth: 1, sigma_init: 1e-3, variant: FusionVariant::Full }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(EfaError::Config(format!("model_dim {} must be a positive multiple of heads {}", self.model_dim, self.heads)));
        }
        if self.visual_dim == 0 || self.text_dim == 0 || self.depth == 0 {
            return Err(EfaError::Config("fusion widths and depth must be at least 1".into()));
        }
        if !self.sigma_init.is_finite() {
            return Err(EfaError::Config("sigma_init must be finite".into()));
        }
        Ok(())
    }
}

/// Query/key/value projections and the head-mixing output matrix of one attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
    pub model_dim: usize,
}

impl AttentionParams {
    pub fn register(store: &mut ParamStore, init: &mut Initializer, prefix: &str, model_dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !model_dim.is_multiple_of(heads) {
            return Err(EfaError::Config(format!("model_dim {model_dim} is not divisible by {heads} heads")));
        }
        let mut w = |name: &str| store.register(format!("{prefix}.{name}"), init.xavier(model_dim, model_dim), true);
        Ok(Self { w_q: w("W_Q")?, w_k: w("W_K")?, w_v: w("W_V")?, w_o: w("W_O")?, heads, model_dim })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Per-channel learnable residual scale (`1 x d_m`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualScale(pub ParamId);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateParams {
    /// `2 d_m x d_m`.
    pub w_g: ParamId,
    /// `1 x d_m`.
    pub b_g: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register(store: &mut ParamStore, init: &mut Initializer, prefix: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            weight: store.register(format!("{prefix}.weight"), init.xavier(fan_in, fan_out), true)?,
            bias: store.register(format!("{prefix}.bias"), Matrix::zeros(1, fan_out), false)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// One bidirectional block: text attends video, then video attends the updated text.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionBlock {
    /// Attn1 / Attn3 (absent under [`FusionVariant::QueryVideo`]).
    pub text_attn: Option<AttentionParams>,
    /// sigma_1 / sigma_3.
    pub text_scale: Option<ResidualScale>,
    /// Attn2 / Attn4 (absent under [`FusionVariant::QueryText`]).
    pub video_attn: Option<AttentionParams>,
    /// sigma_2 / sigma_4.
    pub video_scale: ResidualScale,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub config: FusionConfig,
    pub video_proj: Linear,
    pub step_proj: Linear,
    pub global_proj: Linear,
    pub global: Vec<FusionBlock>,
    pub step: Vec<FusionBlock>,
    /// Gate for the full model; the linear map for [`FusionVariant::Concatenate`].
    pub gate: Option<GateParams>,
}

/// Result of one attention layer.
pub struct AttentionOutput {
    pub output: NodeId,
    /// One `N_q x N_kv` row-stochastic map per head.
    pub maps: Vec<NodeId>,
}

/// Node ids for every intermediate of one fusion pass.
pub struct FusionOutput {
    pub video: NodeId,
    pub steps: NodeId,
    pub global: NodeId,
    pub text_global: Option<NodeId>,
    pub video_global: Option<NodeId>,
    pub text_steps: Option<NodeId>,
    pub video_steps: Option<NodeId>,
    pub gate: Option<NodeId>,
    pub fused: NodeId,
    pub attention_maps: Vec<NodeId>,
}

fn check_finite(g: &Graph, x: NodeId, what: &str) -> Result<()> {
    if g.value(x).is_finite() {
        Ok(())
    } else {
        Err(EfaError::NonFinite(what.into()))
    }
}

/// Multi-head scaled dot-product attention.
///
/// `queries` is `N_q x d_m`, `keys_values` is `N_kv x d_m`. With `causal`
/// set, query `i` only sees keys `0..=i`.
pub fn cross_attention(
    g: &mut Graph,
    params: &AttentionParams,
    queries: NodeId,
    keys_values: NodeId,
    causal: bool,
) -> Result<AttentionOutput> {
    let dm = params.model_dim;
    let (nq, dq) = g.shape(queries);
    let (nkv, dkv) = g.shape(keys_values);
    if dq != dm || dkv != dm {
        return Err(EfaError::Shape(format!("attention expects width {dm}, got queries {dq} and keys {dkv}")));
    }
    if nq == 0 || nkv == 0 {
        return Err(EfaError::Shape("attention needs at least one query and one key".into()));
    }
    check_finite(g, queries, "attention queries")?;
    check_finite(g, keys_values, "attention keys/values")?;

    let (wq, wk, wv, wo) = (g.param(params.w_q), g.param(params.w_k), g.param(params.w_v), g.param(params.w_o));
    let q = g.matmul(queries, wq)?;
    let k = g.matmul(keys_values, wk)?;
    let v = g.matmul(keys_values, wv)?;
    let dk = params.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut heads = Vec::with_capacity(params.heads);
    let mut maps = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax(scores, causal);
        maps.push(attn);
        heads.push(g.matmul(attn, vh)?);
    }
    let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    let output = g.matmul(joined, wo)?;
    Ok(AttentionOutput { output, maps })
}

fn scaled_residual(g: &mut Graph, update: NodeId, scale: ResidualScale, x: NodeId) -> Result<NodeId> {
    let s = g.param(scale.0);
    let r = g.mul_row(x, s)?;
    g.add(update, r)
}

/// Text-side and video-side outputs of one branch.
pub struct BranchOutput {
    /// Updated text (`Ftg*` or `Fts*`).
    pub text: NodeId,
    /// Text-calibrated video (`Fvg` or `Fvs`).
    pub video: NodeId,
    pub maps: Vec<NodeId>,
}

/// Run one branch's stack of bidirectional blocks. Used for both the
/// global-aware (`text` is `1 x d_m`) and step-aware (`text` is `M x d_m`) branches.
pub fn bidirectional_fuse(g: &mut Graph, blocks: &[FusionBlock], video: NodeId, text: NodeId) -> Result<BranchOutput> {
    let (n, dv) = g.shape(video);
    let (m, dt) = g.shape(text);
    if dv != dt {
        return Err(EfaError::Shape(format!("video width {dv} != text width {dt}")));
    }
    if n == 0 || m == 0 {
        return Err(EfaError::Shape(format!("branch needs non-empty inputs, got {n} video and {m} text rows")));
    }
    let (mut v, mut t) = (video, text);
    let mut maps = Vec::new();
    for block in blocks {
        let t_star = match (&block.text_attn, block.text_scale) {
            (Some(attn), Some(scale)) => {
                let a = cross_attention(g, attn, t, v, false)?;
                maps.extend(a.maps);
                scaled_residual(g, a.output, scale, t)?
            }
            _ => t,
        };
        let v_new = match &block.video_attn {
            Some(attn) => {
                let a = cross_attention(g, attn, v, t_star, false)?;
                maps.extend(a.maps);
                scaled_residual(g, a.output, block.video_scale, v)?
            }
            None => {
                let pooled = g.mean_rows(t_star);
                let s = g.param(block.video_scale.0);
                let r = g.mul_row(v, s)?;
                g.add_row(r, pooled)?
            }
        };
        v = v_new;
        t = t_star;
    }
    Ok(BranchOutput { text: t, video: v, maps })
}

/// `G = sigmoid([Fvg, Fvs] Wg + bg)`, `Ff = G * Fvg + (1 - G) * Fvs`. Returns `(Ff, G)`.
pub fn hierarchical_gate_fuse(g: &mut Graph, gate: &GateParams, video_global: NodeId, video_steps: NodeId) -> Result<(NodeId, NodeId)> {
    if g.shape(video_global) != g.shape(video_steps) {
        return Err(EfaError::Shape(format!("gate inputs differ: {:?} vs {:?}", g.shape(video_global), g.shape(video_steps))));
    }
    let both = g.concat_cols(&[video_global, video_steps])?;
    let w = g.param(gate.w_g);
    let b = g.param(gate.b_g);
    let pre = g.matmul(both, w)?;
    let pre = g.add_row(pre, b)?;
    let gate_values = g.sigmoid(pre);
    let keep_global = g.mul(gate_values, video_global)?;
    let complement = g.affine(gate_values, -1.0, 1.0);
    let keep_steps = g.mul(complement, video_steps)?;
    Ok((g.add(keep_global, keep_steps)?, gate_values))
}

impl FusionParams {
    /// Register all fusion parameters under `prefix` (normally `fusion`).
    pub fn register(store: &mut ParamStore, init: &mut Initializer, prefix: &str, config: &FusionConfig) -> Result<Self> {
        config.validate()?;
        let dm = config.model_dim;
        let variant = config.variant;
        let video_proj = Linear::register(store, init, &format!("{prefix}.proj_video"), config.visual_dim, dm)?;
        let step_proj = Linear::register(store, init, &format!("{prefix}.proj_steps"), config.text_dim, dm)?;
        let global_proj = Linear::register(store, init, &format!("{prefix}.proj_global"), config.text_dim, dm)?;

        let branch = |store: &mut ParamStore, init: &mut Initializer, name: &str, first: usize| -> Result<Vec<FusionBlock>> {
            (0..config.depth)
                .map(|b| {
                    let base = format!("{prefix}.{name}.{b}");
                    let sigma = |store: &mut ParamStore, i: usize| {
                        store.register(format!("{base}.sigma_{i}"), Matrix::filled(1, dm, config.sigma_init), false).map(ResidualScale)
                    };
                    let (text_attn, text_scale) = if variant.text_queries() {
                        let a = AttentionParams::register(store, init, &format!("{base}.attn_{first}"), dm, config.heads)?;
                        (Some(a), Some(sigma(store, first)?))
                    } else {
                        (None, None)
                    };
                    let video_attn = if variant.video_queries() {
                        Some(AttentionParams::register(store, init, &format!("{base}.attn_{}", first + 1), dm, config.heads)?)
                    } else {
                        None
                    };
                    let video_scale = sigma(store, first + 1)?;
                    Ok(FusionBlock { text_attn, text_scale, video_attn, video_scale })
                })
                .collect()
        };
        let global = if variant.has_global() { branch(store, init, "global", 1)? } else { Vec::new() };
        let step = if variant.has_step() { branch(store, init, "step", 3)? } else { Vec::new() };

        let gate = match variant {
            FusionVariant::WithoutGlobal | FusionVariant::WithoutStep | FusionVariant::Add => None,
            FusionVariant::Concatenate => Some(GateParams {
                w_g: store.register(format!("{prefix}.W_cat"), init.xavier(2 * dm, dm), true)?,
                b_g: store.register(format!("{prefix}.b_cat"), Matrix::zeros(1, dm), false)?,
            }),
            _ => Some(GateParams {
                w_g: store.register(format!("{prefix}.W_g"), init.xavier(2 * dm, dm), true)?,
                b_g: store.register(format!("{prefix}.b_g"), Matrix::zeros(1, dm), false)?,
            }),
        };
        Ok(Self { config: config.clone(), video_proj, step_proj, global_proj, global, step, gate })
    }

    /// Global branch on projected inputs: `Fv` is `N x d_m`, `Ftg` is `1 x d_m`.
    pub fn global_aware_fuse(&self, g: &mut Graph, video: NodeId, text_global: NodeId) -> Result<BranchOutput> {
        if g.shape(text_global).0 != 1 {
            return Err(EfaError::Shape(format!("global text must be one row, got {}", g.shape(text_global).0)));
        }
        if self.global.is_empty() {
            return Err(EfaError::InvalidArgument("global branch is disabled in this variant".into()));
        }
        bidirectional_fuse(g, &self.global, video, text_global)
    }

    /// Step branch on projected inputs: `Fv` is `N x d_m`, `Fts` is `M x d_m`.
    pub fn step_aware_fuse(&self, g: &mut Graph, video: NodeId, text_steps: NodeId) -> Result<BranchOutput> {
        if self.step.is_empty() {
            return Err(EfaError::InvalidArgument("step branch is disabled in this variant".into()));
        }
        bidirectional_fuse(g, &self.step, video, text_steps)
    }

    /// Project raw features (`N x D`, `M x E`, `1 x E`) to `d_m`, run both
    /// branches and merge them.
    pub fn fuse(&self, g: &mut Graph, video_raw: NodeId, steps_raw: NodeId, global_raw: NodeId) -> Result<FusionOutput> {
        let cfg = &self.config;
        let (n, d) = g.shape(video_raw);
        let (m, e) = g.shape(steps_raw);
        let (one, e2) = g.shape(global_raw);
        if d != cfg.visual_dim || e != cfg.text_dim || e2 != cfg.text_dim || one != 1 {
            return Err(EfaError::Shape(format!(
                "fusion expects video Nx{}, steps Mx{}, global 1x{}; got {n}x{d}, {m}x{e}, {one}x{e2}",
                cfg.visual_dim, cfg.text_dim, cfg.text_dim
            )));
        }
        if n == 0 || m == 0 {
            return Err(EfaError::Shape("fusion needs at least one video token and one step".into()));
        }
        let video = self.video_proj.forward(g, video_raw)?;
        let steps = self.step_proj.forward(g, steps_raw)?;
        let global = self.global_proj.forward(g, global_raw)?;

        let mut maps = Vec::new();
        let global_out = if self.global.is_empty() {
            None
        } else {
            let out = self.global_aware_fuse(g, video, global)?;
            maps.extend(out.maps.iter().copied());
            Some(out)
        };
        let step_out = if self.step.is_empty() {
            None
        } else {
            let out = self.step_aware_fuse(g, video, steps)?;
            maps.extend(out.maps.iter().copied());
            Some(out)
        };

        let (fused, gate) = match (&global_out, &step_out) {
            (Some(gl), Some(st)) => match cfg.variant {
                FusionVariant::Add => (g.add(gl.video, st.video)?, None),
                FusionVariant::Concatenate => {
                    let lin = self.gate.expect("concatenate variant registers its projection");
                    let both = g.concat_cols(&[gl.video, st.video])?;
                    let w = g.param(lin.w_g);
                    let b = g.param(lin.b_g);
                    let y = g.matmul(both, w)?;
                    (g.add_row(y, b)?, None)
                }
                _ => {
                    let gate = self.gate.expect("gated variants register W_g and b_g");
                    let (f, gv) = hierarchical_gate_fuse(g, &gate, gl.video, st.video)?;
                    (f, Some(gv))
                }
            },
            (Some(gl), None) => (gl.video, None),
            (None, Some(st)) => (st.video, None),
            (None, None) => unreachable!("a variant removes at most one branch"),
        };
        Ok(FusionOutput {
            video,
            steps,
            global,
            text_global: global_out.as_ref().map(|o| o.text),
            video_global: global_out.as_ref().map(|o| o.video),
            text_steps: step_out.as_ref().map(|o| o.text),
            video_steps: step_out.as_ref().map(|o| o.video),
            gate,
            fused,
            attention_maps: maps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(variant: FusionVariant) -> FusionConfig {
        FusionConfig { visual_dim: 6, text_dim: 5, model_dim: 8, heads: 2, depth: 1, sigma_init: 1e-3, variant }
    }

    fn build(variant: FusionVariant) -> (ParamStore, FusionParams) {
        let mut store = ParamStore::new();
        let p = FusionParams::register(&mut store, &mut Initializer::new(3), "fusion", &config(variant)).unwrap();
        (store, p)
    }

    fn inputs(n: usize, m: usize) -> (Matrix, Matrix, Matrix) {
        let mut init = Initializer::new(99);
        (init.uniform(n, 6, 1.0), init.uniform(m, 5, 1.0), init.uniform(1, 5, 1.0))
    }

    #[test]
    fn parameter_names_follow_symbols() {
        let (store, _) = build(FusionVariant::Full);
        for name in [
            "fusion.global.0.sigma_1",
            "fusion.global.0.sigma_2",
            "fusion.step.0.sigma_3",
            "fusion.step.0.sigma_4",
            "fusion.global.0.attn_1.W_Q",
            "fusion.global.0.attn_2.W_K",
            "fusion.step.0.attn_3.W_V",
            "fusion.step.0.attn_4.W_O",
            "fusion.W_g",
            "fusion.b_g",
        ] {
            assert!(store.id(name).is_some(), "missing {name}");
        }
        assert_eq!(store.by_name("fusion.step.0.sigma_4").unwrap(), &Matrix::filled(1, 8, 1e-3));
    }

    #[test]
    fn variants_register_only_what_they_use() {
        let (store, _) = build(FusionVariant::WithoutGlobal);
        assert!(store.id("fusion.global.0.sigma_1").is_none());
        assert!(store.id("fusion.W_g").is_none());
        let (store, _) = build(FusionVariant::QueryText);
        assert!(store.id("fusion.global.0.attn_2.W_Q").is_none());
        assert!(store.id("fusion.global.0.attn_1.W_Q").is_some());
        let (store, _) = build(FusionVariant::QueryVideo);
        assert!(store.id("fusion.step.0.sigma_3").is_none());
        let (store, _) = build(FusionVariant::Concatenate);
        assert!(store.id("fusion.W_cat").is_some());
    }

    #[test]
    fn shape_errors() {
        let (store, p) = build(FusionVariant::Full);
        let mut g = Graph::new(&store);
        let (v, s, gl) = inputs(4, 5);
        let v = g.input(v);
        let s = g.input(s);
        let gl = g.input(gl);
        assert!(p.fuse(&mut g, s, s, gl).is_err());
        let bad_global = g.input(Matrix::zeros(2, 5));
        assert!(p.fuse(&mut g, v, s, bad_global).is_err());
        let wide = g.input(Matrix::zeros(4, 9));
        assert!(bidirectional_fuse(&mut g, &p.global, wide, wide).is_err());
        let gate = p.gate.unwrap();
        let a = g.input(Matrix::zeros(4, 8));
        let b = g.input(Matrix::zeros(3, 8));
        assert!(hierarchical_gate_fuse(&mut g, &gate, a, b).is_err());
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let (store, p) = build(FusionVariant::Full);
        let mut g = Graph::new(&store);
        let (mut v, s, gl) = inputs(4, 5);
        v[(1, 1)] = f64::NAN;
        let v = g.input(v);
        let s = g.input(s);
        let gl = g.input(gl);
        assert!(matches!(p.fuse(&mut g, v, s, gl), Err(EfaError::NonFinite(_))));
    }

    #[test]
    fn every_variant_produces_n_by_dm() {
        for variant in [
            FusionVariant::Full,
            FusionVariant::WithoutGlobal,
            FusionVariant::WithoutStep,
            FusionVariant::QueryText,
            FusionVariant::QueryVideo,
            FusionVariant::Concatenate,
            FusionVariant::Add,
        ] {
            let (store, p) = build(variant);
            let mut g = Graph::new(&store);
            let (v, s, gl) = inputs(4, 5);
            let (v, s, gl) = (g.input(v), g.input(s), g.input(gl));
            let out = p.fuse(&mut g, v, s, gl).unwrap();
            assert_eq!(g.shape(out.fused), (4, 8), "{variant:?}");
            assert!(g.value(out.fused).is_finite());
        }
    }

    #[test]
    fn deeper_stacks_run() {
        let mut store = ParamStore::new();
        let cfg = FusionConfig { depth: 3, ..config(FusionVariant::Full) };
        let p = FusionParams::register(&mut store, &mut Initializer::new(3), "fusion", &cfg).unwrap();
        assert!(store.id("fusion.step.2.sigma_4").is_some());
        let mut g = Graph::new(&store);
        let (v, s, gl) = inputs(3, 5);
        let (v, s, gl) = (g.input(v), g.input(s), g.input(gl));
        let out = p.fuse(&mut g, v, s, gl).unwrap();
        assert_eq!(g.shape(out.fused), (3, 8));
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = FusionConfig { heads: 3, ..config(FusionVariant::Full) };
        assert!(FusionParams::register(&mut ParamStore::new(), &mut Initializer::new(0), "f", &cfg).is_err());
    }
}
