//! End-to-end drivers shared by the CLI, the FFI layer and the acceptance runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{split_dataset, DatasetManifest, SplitAssignment};
use crate::encoders::Encoders;
use crate::error::{EfaError, Result};
use crate::evaluation::{evaluate_model, MetricReport, Prediction};
use crate::heads::Vocabulary;
use crate::model::{EfaModel, ModelDims};
use crate::tensor::Matrix;
use crate::training::{encode_videos, prepare_samples, Checkpoint, EpochRecord, TrainState, Trainer};

pub const SWEEP_LAMBDAS: [f64; 5] = [1.0, 3.0, 5.0, 10.0, 15.0];

/// Caption vocabulary from the listed records only.
pub fn build_vocabulary(manifest: &DatasetManifest, ids: &[String]) -> Result<Vocabulary> {
    let texts = ids
        .iter()
        .map(|id| {
            manifest
                .record(id)
                .map(|r| r.cot_text.as_str())
                .ok_or_else(|| EfaError::InvalidArgument(format!("sample `{id}` is not in the manifest")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Vocabulary::build(&texts))
}

pub fn build_model(config: &RunConfig, manifest: &DatasetManifest, vocab: Vocabulary) -> Result<EfaModel> {
    let dims = ModelDims {
        visual_dim: config.encoder.visual_dim,
        text_dim: config.encoder.text_dim,
        num_categories: manifest.num_categories,
        vocab_size: vocab.len(),
    };
    EfaModel::new(&config.model, dims, vocab, manifest.lexicon.clone(), config.model_seed())
}

/// A split is either read from disk by the caller or recomputed from the seed.
pub fn split_for(config: &RunConfig, manifest: &DatasetManifest) -> Result<SplitAssignment> {
    split_dataset(manifest, config.split_seed())
}

pub struct TrainedModel {
    pub model: EfaModel,
    pub encoders: Encoders,
    pub state: TrainState,
    /// Encoded videos of the training ids, reusable for evaluation.
    pub videos: BTreeMap<String, Matrix>,
}

impl TrainedModel {
    pub fn checkpoint(&self, config: &RunConfig) -> Checkpoint {
        Checkpoint::capture(&self.model, &self.encoders.config, &config.train, Some(&self.state))
    }
}

/// Build a fresh model on `train_ids` and run the full schedule.
pub fn train(
    config: &RunConfig,
    manifest: &DatasetManifest,
    train_ids: &[String],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    let encoders = Encoders::toy(&config.encoder)?;
    let vocab = build_vocabulary(manifest, train_ids)?;
    let mut model = build_model(config, manifest, vocab)?;
    let videos = encode_videos(manifest, &encoders, train_ids)?;
    let samples = prepare_samples(&model, &encoders, manifest, train_ids, &videos)?;
    let state = {
        let mut trainer = Trainer::new(&model, &config.train, samples)?.with_frame_jitter(manifest, &encoders);
        trainer.run(&mut model, on_epoch)?;
        trainer.state
    };
    Ok(TrainedModel { model, encoders, state, videos })
}

/// Evaluate on `ids`, reusing already encoded videos where possible.
pub fn evaluate(
    config: &RunConfig,
    model: &EfaModel,
    encoders: &Encoders,
    manifest: &DatasetManifest,
    ids: &[String],
    cached: &BTreeMap<String, Matrix>,
) -> Result<(MetricReport, Vec<Prediction>)> {
    let missing: Vec<String> = ids.iter().filter(|id| !cached.contains_key(*id)).cloned().collect();
    let mut videos = encode_videos(manifest, encoders, &missing)?;
    for id in ids {
        if let Some(v) = cached.get(id) {
            videos.insert(id.clone(), v.clone());
        }
    }
    evaluate_model(model, encoders, manifest, ids, &videos, config.eval.decode)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub final_loss: f64,
    pub report: MetricReport,
}

/// Train once per lambda with everything else fixed and score each run on `eval_ids`.
pub fn lambda_sweep(
    config: &RunConfig,
    manifest: &DatasetManifest,
    train_ids: &[String],
    eval_ids: &[String],
    lambdas: &[f64],
) -> Result<Vec<SweepRow>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let mut cfg = config.clone();
            cfg.train.lambda = lambda;
            cfg.validate()?;
            let trained = train(&cfg, manifest, train_ids, |_| {})?;
            let (report, _) = evaluate(&cfg, &trained.model, &trained.encoders, manifest, eval_ids, &trained.videos)?;
            let final_loss = trained.state.history.last().map_or(f64::NAN, |r| r.total);
            Ok(SweepRow { lambda, final_loss, report })
        })
        .collect()
}

/// Tab-separated table, one row per lambda; caption metrics x100.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda\tBLEU-4\tMETEOR\tCIDEr-D\tROUGE-L\tTop-1\tTop-5\tAcc\tfinal_loss\n");
    for r in rows {
        let m = &r.report;
        let _ = writeln!(
            s,
            "{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.4}\t{:.4}\t{:.4}\t{:.6}",
            r.lambda,
            m.bleu * 100.0,
            m.meteor * 100.0,
            m.cider * 100.0,
            m.rouge_l * 100.0,
            m.top1,
            m.top5,
            m.quality_acc,
            r.final_loss
        );
    }
    s
}
