#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;

use efa_core::data::ActionLexiconEntry;
use efa_core::encoders::{EncoderConfig, Encoders};
use efa_core::heads::{DecoderConfig, Vocabulary};
use efa_core::model::{Ablation, EfaModel, ModelConfig, ModelDims};
use efa_core::params::ParamStore;
use efa_core::Matrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Row-major dense matrix kept deliberately separate from the library type.
pub type Dense = Vec<Vec<f64>>;

pub fn dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn param(store: &ParamStore, name: &str) -> Dense {
    dense(store.by_name(name).unwrap_or_else(|| panic!("no parameter `{name}`")))
}

pub fn mm(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect()
        })
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Dense, b: &Dense) -> Dense {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

/// `a * s` with `s` a single row broadcast down `a`.
pub fn scale_cols(a: &Dense, s: &[f64]) -> Dense {
    a.iter().map(|r| r.iter().zip(s).map(|(x, y)| x * y).collect()).collect()
}

pub fn add_bias(a: &Dense, b: &[f64]) -> Dense {
    a.iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

pub fn cols(a: &Dense, start: usize, len: usize) -> Dense {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

pub fn softmax_row(r: &[f64]) -> Vec<f64> {
    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn mean_rows(a: &Dense) -> Vec<f64> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).sum::<f64>() / a.len() as f64).collect()
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

/// Multi-head attention straight from its definition, weights looked up by prefix.
pub fn attention(store: &ParamStore, prefix: &str, heads: usize, q_in: &Dense, kv_in: &Dense) -> Dense {
    let q = mm(q_in, &param(store, &format!("{prefix}.W_Q")));
    let k = mm(kv_in, &param(store, &format!("{prefix}.W_K")));
    let v = mm(kv_in, &param(store, &format!("{prefix}.W_V")));
    let dm = q[0].len();
    let dk = dm / heads;
    let mut joined = vec![Vec::new(); q.len()];
    for h in 0..heads {
        let (qh, kh, vh) = (cols(&q, h * dk, dk), cols(&k, h * dk, dk), cols(&v, h * dk, dk));
        let scores = mm(&qh, &transpose(&kh));
        for (i, row) in scores.iter().enumerate() {
            let w = softmax_row(&row.iter().map(|s| s / (dk as f64).sqrt()).collect::<Vec<_>>());
            for c in 0..dk {
                joined[i].push((0..vh.len()).map(|j| w[j] * vh[j][c]).sum());
            }
        }
    }
    mm(&joined, &param(store, &format!("{prefix}.W_O")))
}

/// One bidirectional block: returns `(text*, video')`.
pub fn branch(store: &ParamStore, base: &str, first: usize, heads: usize, video: &Dense, text: &Dense) -> (Dense, Dense) {
    let s_t = &param(store, &format!("{base}.sigma_{first}"))[0];
    let s_v = &param(store, &format!("{base}.sigma_{}", first + 1))[0];
    let t_star = add(&attention(store, &format!("{base}.attn_{first}"), heads, text, video), &scale_cols(text, s_t));
    let v = add(&attention(store, &format!("{base}.attn_{}", first + 1), heads, video, &t_star), &scale_cols(video, s_v));
    (t_star, v)
}

pub fn linear(store: &ParamStore, prefix: &str, x: &Dense) -> Dense {
    add_bias(&mm(x, &param(store, &format!("{prefix}.weight"))), &param(store, &format!("{prefix}.bias"))[0])
}

pub fn gate(store: &ParamStore, vg: &Dense, vs: &Dense) -> Dense {
    let w = param(store, "fusion.W_g");
    let b = &param(store, "fusion.b_g")[0];
    let d = vg[0].len();
    (0..vg.len())
        .map(|i| {
            (0..d)
                .map(|c| {
                    let pre = b[c] + (0..d).map(|k| vg[i][k] * w[k][c] + vs[i][k] * w[d + k][c]).sum::<f64>();
                    let g = sigmoid(pre);
                    g * vg[i][c] + (1.0 - g) * vs[i][c]
                })
                .collect()
        })
        .collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn entry(c: usize) -> ActionLexiconEntry {
    ActionLexiconEntry {
        category_id: c,
        category_name: format!("move {c}"),
        steps: (0..5).map(|s| format!("move {c} step {s} keeps the torso braced")).collect(),
        general_instruction: format!("perform move {c} with control"),
    }
}

pub fn small_config(model_dim: usize, heads: usize, ablation: Ablation) -> ModelConfig {
    ModelConfig {
        model_dim,
        heads,
        fusion_depth: 1,
        sigma_init: 1e-3,
        head_hidden: model_dim,
        ablation,
        decoder: DecoderConfig { layers: 1, heads, ffn_mult: 2, max_len: 8 },
    }
}

/// `C = 3` model over toy encoders (`D = 6`, `E = 5`).
pub fn small_model(config: &ModelConfig, seed: u64) -> (EfaModel, Encoders) {
    let enc = EncoderConfig { visual_dim: 6, text_dim: 5, ..Default::default() };
    let encoders = Encoders::toy(&enc).unwrap();
    let vocab = Vocabulary::build(&["the knee drifts inward so brace the core ."]);
    let lexicon: BTreeMap<usize, ActionLexiconEntry> = (0..3).map(|c| (c, entry(c))).collect();
    let dims = ModelDims { visual_dim: 6, text_dim: 5, num_categories: 3, vocab_size: vocab.len() };
    (EfaModel::new(config, dims, vocab, lexicon, seed).unwrap(), encoders)
}

pub struct GroupCheck {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Central differences with step `h` against backprop for every parameter of
/// a `d_m = 8`, `C = 3` model on four video tokens.
pub fn gradient_check(h: f64) -> Vec<GroupCheck> {
    use efa_core::training::{sample_gradients, sample_loss, LossWeights, SampleTargets};
    let (mut model, encoders) = small_model(&small_config(8, 2, Ablation::None), 31);
    let mut r = rng(32);
    let sigma_names: Vec<String> = model.store.iter().map(|(_, p)| p.name.clone()).filter(|n| n.contains("sigma_")).collect();
    for n in sigma_names {
        let id = model.store.id(&n).unwrap();
        *model.store.value_mut(id) = random_matrix(&mut r, 1, 8).scale(0.5);
    }
    let b = model.store.id("fusion.b_g").unwrap();
    *model.store.value_mut(b) = random_matrix(&mut r, 1, 8).scale(0.5);
    let video = random_matrix(&mut r, 4, 6);
    let text = model.prepare_text(&encoders, &entry(1), "probe").unwrap();
    let targets = SampleTargets { category: 1, quality: 0.0, tokens: model.vocab.encode_target("the knee drifts inward", 7) };
    let weights = LossWeights { lambda: 3.0, label_smoothing: 0.1 };
    let (grads, _) = sample_gradients(&model, &video, &text, &targets, &weights).unwrap();

    let ids: Vec<_> = model.store.ids().collect();
    ids.into_iter()
        .map(|id| {
            let name = model.store.get(id).name.clone();
            let analytic = grads.get(id).cloned().unwrap_or_else(|| {
                let v = model.store.value(id);
                Matrix::zeros(v.rows(), v.cols())
            });
            let n = model.store.value(id).len();
            let mut numeric = Vec::with_capacity(n);
            for k in 0..n {
                let orig = model.store.value(id).as_slice()[k];
                model.store.value_mut(id).as_mut_slice()[k] = orig + h;
                let up = sample_loss(&model, &video, &text, &targets, &weights).unwrap().total;
                model.store.value_mut(id).as_mut_slice()[k] = orig - h;
                let down = sample_loss(&model, &video, &text, &targets, &weights).unwrap().total;
                model.store.value_mut(id).as_mut_slice()[k] = orig;
                numeric.push((up - down) / (2.0 * h));
            }
            let a = analytic.as_slice();
            let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let an = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = an.max(nn);
            GroupCheck { name, rel_error: if scale == 0.0 { 0.0 } else { diff / scale }, analytic_norm: an }
        })
        .collect()
}

/// Names that must be present and nonzero among the checked groups.
pub const REQUIRED_GROUPS: [&str; 6] =
    ["fusion.global.0.sigma_1", "fusion.global.0.sigma_2", "fusion.step.0.sigma_3", "fusion.step.0.sigma_4", "fusion.W_g", "fusion.b_g"];

pub fn desk_config(overrides: &[&str]) -> efa_core::config::RunConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml");
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    efa_core::config::RunConfig::load(Some(&path), &overrides).unwrap()
}

/// Write the synthetic dataset for `config` into `dir` and load it back.
pub fn synthetic_manifest(config: &efa_core::config::RunConfig, dir: &std::path::Path) -> efa_core::data::DatasetManifest {
    efa_core::data::generate_synthetic_dataset(&config.synthetic).unwrap().write_to(dir).unwrap();
    efa_core::data::load_manifest(&dir.join("manifest.json")).unwrap()
}

pub fn all_ids(manifest: &efa_core::data::DatasetManifest) -> Vec<String> {
    manifest.records.iter().map(|r| r.sample_id.clone()).collect()
}
