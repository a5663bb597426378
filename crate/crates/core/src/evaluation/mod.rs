//! Metrics, corpus statistics and full-model evaluation.

pub mod metrics;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{bleu, cider, meteor, metric_tokens, rouge_l, topk_accuracy, METEOR_LABEL};
pub use stats::{corpus_statistics, parse_keywords, CorpusStats, KeywordLists};

use crate::data::{DatasetManifest, Quality};
use crate::encoders::Encoders;
use crate::error::{EfaError, Result};
use crate::heads::{tokenize, DecodeMode};
use crate::model::EfaModel;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub bleu: f64,
    pub meteor: f64,
    pub cider: f64,
    pub rouge_l: f64,
    pub top1: f64,
    pub top5: f64,
    pub quality_acc: f64,
    /// Share of explanations whose token sequence equals the reference exactly.
    pub caption_exact_match: f64,
    pub meteor_matchers: String,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let all = [self.bleu, self.meteor, self.cider, self.rouge_l, self.top1, self.top5, self.quality_acc, self.caption_exact_match];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(EfaError::NonFinite("metric report".into()));
        }
        if [self.top1, self.top5, self.quality_acc].iter().any(|v| *v > 1.0) {
            return Err(EfaError::InvalidArgument("accuracy above 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Two-column table; caption scores are shown x100 as is customary.
    pub fn to_table(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        let rows = [
            ("samples", self.samples as f64),
            ("BLEU-4", self.bleu * 100.0),
            (METEOR_LABEL, self.meteor * 100.0),
            ("CIDEr-D", self.cider * 100.0),
            ("ROUGE-L", self.rouge_l * 100.0),
            ("Top-1", self.top1),
            ("Top-5", self.top5),
            ("quality Acc", self.quality_acc),
            ("caption exact match", self.caption_exact_match),
        ];
        for (name, v) in rows {
            let _ = writeln!(s, "{name}\t{v:.4}");
        }
        s
    }
}

/// Model output for one evaluated sample, next to its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub category: usize,
    pub true_category: usize,
    pub category_logits: Vec<f64>,
    pub quality_prob: f64,
    pub true_quality: Quality,
    pub explanation: String,
    pub reference: String,
}

pub fn score_predictions(predictions: &[Prediction]) -> Result<MetricReport> {
    if predictions.is_empty() {
        return Err(EfaError::InvalidArgument("nothing to evaluate".into()));
    }
    let hyps: Vec<&str> = predictions.iter().map(|p| p.explanation.as_str()).collect();
    let refs: Vec<&str> = predictions.iter().map(|p| p.reference.as_str()).collect();
    let logits: Vec<Vec<f64>> = predictions.iter().map(|p| p.category_logits.clone()).collect();
    let labels: Vec<usize> = predictions.iter().map(|p| p.true_category).collect();
    let n = predictions.len() as f64;
    let quality_hits = predictions.iter().filter(|p| Quality::from_probability(p.quality_prob) == p.true_quality).count();
    let exact = predictions.iter().filter(|p| tokenize(&p.explanation) == tokenize(&p.reference)).count();
    let report = MetricReport {
        samples: predictions.len(),
        bleu: bleu(&hyps, &refs)?,
        meteor: meteor(&hyps, &refs)?,
        cider: cider(&hyps, &refs)?,
        rouge_l: rouge_l(&hyps, &refs)?,
        top1: topk_accuracy(&logits, &labels, 1)?,
        top5: topk_accuracy(&logits, &labels, 5)?,
        quality_acc: quality_hits as f64 / n,
        caption_exact_match: exact as f64 / n,
        meteor_matchers: METEOR_LABEL.into(),
    };
    report.validate()?;
    Ok(report)
}

/// Run full inference on `ids` and score it. The lexicon is looked up through
/// the predicted category, never the ground truth.
pub fn evaluate_model(
    model: &EfaModel,
    encoders: &Encoders,
    manifest: &DatasetManifest,
    ids: &[String],
    videos: &BTreeMap<String, Matrix>,
    mode: DecodeMode,
) -> Result<(MetricReport, Vec<Prediction>)> {
    let predictions: Vec<Result<Prediction>> = ids
        .par_iter()
        .map(|id| {
            let record = manifest.record(id).ok_or_else(|| EfaError::InvalidArgument(format!("sample `{id}` is not in the manifest")))?;
            let video = videos.get(id).ok_or_else(|| EfaError::InvalidArgument(format!("no video features for `{id}`")))?;
            let result = model.assess_with(encoders, video, id, mode)?;
            Ok(Prediction {
                sample_id: id.clone(),
                category: result.category,
                true_category: record.category_id,
                category_logits: result.category_logits,
                quality_prob: result.quality_prob,
                true_quality: record.quality,
                explanation: result.explanation,
                reference: record.cot_text.clone(),
            })
        })
        .collect();
    let predictions = predictions.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((score_predictions(&predictions)?, predictions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prediction(i: usize, explanation: &str) -> Prediction {
        Prediction {
            sample_id: format!("s{i}"),
            category: i % 3,
            true_category: i % 3,
            category_logits: (0..3).map(|c| if c == i % 3 { 2.0 } else { 0.0 }).collect(),
            quality_prob: if i.is_multiple_of(2) { 0.9 } else { 0.1 },
            true_quality: if i.is_multiple_of(2) { Quality::Standard } else { Quality::NonStandard },
            explanation: explanation.into(),
            reference: format!("the knee drifts inward during sample {i}."),
        }
    }

    #[test]
    fn copying_ground_truth_maximizes_everything() {
        let preds: Vec<Prediction> = (0..4).map(|i| prediction(i, &format!("the knee drifts inward during sample {i}."))).collect();
        let r = score_predictions(&preds).unwrap();
        assert_eq!((r.bleu, r.rouge_l, r.top1, r.top5, r.quality_acc, r.caption_exact_match), (1.0, 1.0, 1.0, 1.0, 1.0, 1.0));
        // One chunk of seven matches: the fragmentation penalty is 0.5 / 7^3.
        assert!((r.meteor - (1.0 - 0.5 / 343.0)).abs() < 1e-12);
        assert!(r.to_table().contains("Top-1\t1.0000"));
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(score_predictions(&[]).is_err());
    }
}
