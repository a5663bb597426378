//! Multi-task training: losses, schedule, optimizer, the training loop and checkpoints.

pub mod checkpoint;
pub mod loss;
pub mod optim;
pub mod schedule;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use loss::{loss_graph, loss_total, LossBreakdown, LossNodes, LossWeights, SampleTargets};
pub use optim::{adamw_step, clip_global_norm, global_norm, AdamWConfig, AdamWState};
pub use schedule::{lr_at, warmup_steps};

use crate::autograd::Graph;
use crate::data::{DatasetManifest, MediaRef, SampleRecord};
use crate::encoders::{load_visual_input_with, Encoders, TextFeatures};
use crate::error::{EfaError, Result};
use crate::model::EfaModel;
use crate::params::{derive_seed, Gradients};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub label_smoothing: f64,
    /// Weight of the category loss.
    pub lambda: f64,
    /// Stop after this many optimizer updates; the schedule spans the shorter of this and `epochs`.
    pub max_steps: Option<usize>,
    /// Threads for per-sample gradients; 0 uses every core. Results do not depend on it.
    pub workers: usize,
    /// Randomly offset sampled frames inside their segments (frame directories only).
    pub frame_jitter: bool,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    /// Filled from the run's root seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 8,
            lr: 1e-4,
            weight_decay: 0.01,
            warmup_frac: 0.1,
            label_smoothing: 0.1,
            lambda: 3.0,
            max_steps: None,
            workers: 0,
            frame_jitter: false,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(EfaError::Config("train.epochs and train.batch_size must be at least 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(EfaError::Config("train.max_steps must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(EfaError::Config("train.lr and train.weight_decay must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(EfaError::Config("train.warmup_frac must be in [0, 1]".into()));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(EfaError::Config("train.grad_clip must be finite and >= 0".into()));
        }
        self.loss_weights().validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda: self.lambda, label_smoothing: self.label_smoothing }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { weight_decay: self.weight_decay, ..Default::default() }
    }
}

/// One training sample with everything frozen precomputed.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub sample_id: String,
    /// `N x D` visual tokens (uniform frame sampling).
    pub video: Matrix,
    /// Text of the ground-truth category, after text ablations.
    pub text: TextFeatures,
    pub targets: SampleTargets,
}

/// Encode every listed record's video. Records are processed in parallel and
/// returned in input order.
pub fn encode_videos(manifest: &DatasetManifest, encoders: &Encoders, ids: &[String]) -> Result<BTreeMap<String, Matrix>> {
    let encoded: Vec<Result<(String, Matrix)>> = ids
        .par_iter()
        .map(|id| {
            let record = record(manifest, id)?;
            Ok((id.clone(), encoders.encode_record(manifest, record)?.into_matrix()))
        })
        .collect();
    encoded.into_iter().collect()
}

fn record<'m>(manifest: &'m DatasetManifest, id: &str) -> Result<&'m SampleRecord> {
    manifest.record(id).ok_or_else(|| EfaError::InvalidArgument(format!("sample `{id}` is not in the manifest")))
}

/// Build training samples: ground-truth lexicon text, caption targets and cached video.
pub fn prepare_samples(
    model: &EfaModel,
    encoders: &Encoders,
    manifest: &DatasetManifest,
    ids: &[String],
    videos: &BTreeMap<String, Matrix>,
) -> Result<Vec<PreparedSample>> {
    let max_body = model.config.decoder.max_len - 1;
    ids.iter()
        .map(|id| {
            let r = record(manifest, id)?;
            let video = videos.get(id).cloned().ok_or_else(|| EfaError::InvalidArgument(format!("no video features for `{id}`")))?;
            let text = model.prepare_text(encoders, model.lexicon_entry(r.category_id)?, id)?;
            Ok(PreparedSample {
                sample_id: id.clone(),
                video,
                text,
                targets: SampleTargets {
                    category: r.category_id,
                    quality: r.quality.target(),
                    tokens: model.vocab.encode_target(&r.cot_text, max_body),
                },
            })
        })
        .collect()
}

/// Forward pass and objective for one sample, returning the graph's loss nodes' values.
pub fn sample_loss(
    model: &EfaModel,
    video: &Matrix,
    text: &TextFeatures,
    targets: &SampleTargets,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(&model.store);
    let (loss, _) = build_objective(&mut g, model, video, text, targets, weights)?;
    Ok(loss.breakdown(&g))
}

/// Loss and its gradient with respect to every model parameter.
pub fn sample_gradients(
    model: &EfaModel,
    video: &Matrix,
    text: &TextFeatures,
    targets: &SampleTargets,
    weights: &LossWeights,
) -> Result<(Gradients, LossBreakdown)> {
    let mut g = Graph::new(&model.store);
    let (loss, _) = build_objective(&mut g, model, video, text, targets, weights)?;
    Ok((g.backward(loss.total)?, loss.breakdown(&g)))
}

fn build_objective(
    g: &mut Graph,
    model: &EfaModel,
    video: &Matrix,
    text: &TextFeatures,
    targets: &SampleTargets,
    weights: &LossWeights,
) -> Result<(LossNodes, crate::model::ModelOutputs)> {
    let out = model.forward(g, video, text)?;
    let token_logits = model.decoder.teacher_forced_logits(g, out.fusion.fused, &targets.tokens)?;
    Ok((loss_graph(g, &out, token_logits, targets, weights)?, out))
}

/// Mean losses over one epoch, as written to the history log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer updates completed at the end of the epoch.
    pub step: usize,
    pub l_c: f64,
    pub l_q: f64,
    pub l_t: f64,
    pub total: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochAccumulator {
    pub sums: LossBreakdown,
    pub samples: usize,
}

/// Everything needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Optimizer updates completed.
    pub step: usize,
    pub optimizer: AdamWState,
    pub history: Vec<EpochRecord>,
    pub epoch_accum: EpochAccumulator,
}

/// Result of one optimizer update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    samples: Vec<PreparedSample>,
    jitter: Option<(&'a DatasetManifest, &'a Encoders)>,
    pool: Option<rayon::ThreadPool>,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &EfaModel, config: &TrainConfig, samples: Vec<PreparedSample>) -> Result<Self> {
        let state =
            TrainState { step: 0, optimizer: AdamWState::new(&model.store), history: Vec::new(), epoch_accum: EpochAccumulator::default() };
        Self::resume(model, config, samples, state)
    }

    pub fn resume(model: &EfaModel, config: &TrainConfig, samples: Vec<PreparedSample>, state: TrainState) -> Result<Self> {
        config.validate()?;
        if samples.is_empty() {
            return Err(EfaError::InvalidArgument("no training samples".into()));
        }
        state.optimizer.check(&model.store)?;
        let pool = match config.workers {
            0 => None,
            n => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| EfaError::Config(format!("cannot start {n} workers: {e}")))?,
            ),
        };
        let trainer = Self { config: config.clone(), samples, jitter: None, pool, state };
        if trainer.state.step > trainer.total_steps() {
            return Err(EfaError::InvalidArgument(format!(
                "checkpoint step {} is past the end of the schedule ({})",
                trainer.state.step,
                trainer.total_steps()
            )));
        }
        Ok(trainer)
    }

    /// Re-sample frame directories with jitter each epoch (if enabled in the config).
    pub fn with_frame_jitter(mut self, manifest: &'a DatasetManifest, encoders: &'a Encoders) -> Self {
        if self.config.frame_jitter {
            self.jitter = Some((manifest, encoders));
        }
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn samples(&self) -> &[PreparedSample] {
        &self.samples
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples.len().div_ceil(self.config.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        let full = self.config.epochs * self.steps_per_epoch();
        self.config.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn is_finished(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    /// Sample order for `epoch`, a pure function of the seed and epoch.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("epoch-{epoch}")));
        order.shuffle(&mut rng);
        order
    }

    fn video_for(&self, index: usize, epoch: usize) -> Result<Matrix> {
        let sample = &self.samples[index];
        if let Some((manifest, encoders)) = self.jitter {
            let r = record(manifest, &sample.sample_id)?;
            if matches!(r.media_ref, MediaRef::Frames { .. }) {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("jitter-{epoch}-{}", sample.sample_id)));
                let input = load_visual_input_with(manifest, r, encoders.config.frames_per_video, Some(&mut rng))?;
                return Ok(encoders.visual_encode(&input)?.into_matrix());
            }
        }
        Ok(sample.video.clone())
    }

    /// One optimizer update on the next batch.
    pub fn step(&mut self, model: &mut EfaModel) -> Result<StepReport> {
        if self.is_finished() {
            return Err(EfaError::InvalidArgument("training schedule already finished".into()));
        }
        let s = self.state.step;
        let spe = self.steps_per_epoch();
        let (epoch, batch) = (s / spe, s % spe);
        let order = self.epoch_order(epoch);
        let b = self.config.batch_size;
        let indices = &order[batch * b..((batch + 1) * b).min(order.len())];
        let weights = self.config.loss_weights();

        let per_sample = |&i: &usize| -> Result<(Gradients, LossBreakdown)> {
            let video = self.video_for(i, epoch)?;
            let sample = &self.samples[i];
            sample_gradients(model, &video, &sample.text, &sample.targets, &weights)
        };
        let results: Vec<Result<(Gradients, LossBreakdown)>> = match (&self.pool, self.config.workers) {
            (_, 1) => indices.iter().map(per_sample).collect(),
            (Some(pool), _) => pool.install(|| indices.par_iter().map(per_sample).collect()),
            (None, _) => indices.par_iter().map(per_sample).collect(),
        };

        let mut grads = Gradients::empty(model.store.len());
        let mut sums = LossBreakdown::default();
        for r in results {
            let (g, l) = r.map_err(|e| match e {
                EfaError::NonFinite(_) => EfaError::Diverged { step: s + 1, loss: f64::NAN },
                other => other,
            })?;
            if !l.total.is_finite() {
                return Err(EfaError::Diverged { step: s + 1, loss: l.total });
            }
            grads.merge(&g);
            add_breakdown(&mut sums, &l);
        }
        let n = indices.len() as f64;
        grads.scale(1.0 / n);
        let grad_norm = clip_global_norm(&mut grads, &model.store, self.config.grad_clip);
        if !grad_norm.is_finite() {
            return Err(EfaError::Diverged { step: s + 1, loss: sums.total / n });
        }
        let total = self.total_steps();
        let lr = lr_at(s + 1, total, self.config.lr, self.config.warmup_frac)?;
        adamw_step(&mut model.store, &grads, &mut self.state.optimizer, &self.config.optimizer(), lr)?;
        self.state.step = s + 1;

        add_breakdown(&mut self.state.epoch_accum.sums, &sums);
        self.state.epoch_accum.samples += indices.len();
        if batch + 1 == spe || self.state.step == total {
            let acc = std::mem::take(&mut self.state.epoch_accum);
            let m = acc.samples as f64;
            self.state.history.push(EpochRecord {
                epoch,
                step: self.state.step,
                l_c: acc.sums.category / m,
                l_q: acc.sums.quality / m,
                l_t: acc.sums.text / m,
                total: acc.sums.total / m,
                lr,
            });
        }
        let mean = LossBreakdown { total: sums.total / n, category: sums.category / n, quality: sums.quality / n, text: sums.text / n };
        Ok(StepReport { step: self.state.step, lr, loss: mean, grad_norm })
    }

    /// Train until `stop_step` (clamped to the schedule), calling `on_epoch`
    /// for each completed epoch.
    pub fn run_until(&mut self, model: &mut EfaModel, stop_step: usize, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        let stop = stop_step.min(self.total_steps());
        while self.state.step < stop {
            let before = self.state.history.len();
            self.step(model)?;
            for rec in &self.state.history[before..] {
                on_epoch(rec);
            }
        }
        Ok(())
    }

    pub fn run(&mut self, model: &mut EfaModel, on_epoch: impl FnMut(&EpochRecord)) -> Result<()> {
        self.run_until(model, usize::MAX, on_epoch)
    }
}

fn add_breakdown(acc: &mut LossBreakdown, l: &LossBreakdown) {
    acc.total += l.total;
    acc.category += l.category;
    acc.quality += l.quality;
    acc.text += l.text;
}
