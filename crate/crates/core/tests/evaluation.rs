mod common;

use common::*;
use efa_core::data::Quality;
use efa_core::encoders::Encoders;
use efa_core::evaluation::{bleu, cider, meteor, rouge_l, score_predictions, topk_accuracy, Prediction};
use efa_core::pipeline;
use proptest::prelude::*;

fn copy_of_truth(manifest: &efa_core::data::DatasetManifest) -> Vec<Prediction> {
    manifest
        .records
        .iter()
        .map(|r| {
            let mut logits = vec![0.0; manifest.num_categories];
            logits[r.category_id] = 5.0;
            Prediction {
                sample_id: r.sample_id.clone(),
                category: r.category_id,
                true_category: r.category_id,
                category_logits: logits,
                quality_prob: if r.quality == Quality::Standard { 0.9 } else { 0.1 },
                true_quality: r.quality,
                explanation: r.cot_text.clone(),
                reference: r.cot_text.clone(),
            }
        })
        .collect()
}

#[test]
fn copying_the_ground_truth_maxes_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic_manifest(&desk_config(&[]), dir.path());
    let preds = copy_of_truth(&manifest);
    let r = score_predictions(&preds).unwrap();
    assert_eq!((r.top1, r.top5, r.quality_acc, r.caption_exact_match), (1.0, 1.0, 1.0, 1.0));
    assert!((r.bleu - 1.0).abs() < 1e-12 && (r.rouge_l - 1.0).abs() < 1e-12);

    // Shifting every explanation by one sample can only lower the caption scores.
    let mut shifted = preds.clone();
    let first = shifted[0].explanation.clone();
    for i in 0..shifted.len() - 1 {
        shifted[i].explanation = shifted[i + 1].explanation.clone();
    }
    shifted.last_mut().unwrap().explanation = first;
    let s = score_predictions(&shifted).unwrap();
    assert!(s.bleu < r.bleu && s.meteor < r.meteor && s.cider < r.cider && s.rouge_l < r.rouge_l);
}

#[test]
fn scores_ignore_corpus_order() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synthetic_manifest(&desk_config(&[]), dir.path());
    let mut preds = copy_of_truth(&manifest);
    preds.rotate_left(3);
    for (i, p) in preds.iter_mut().enumerate().step_by(3) {
        p.explanation = format!("{} extra words {i}", p.explanation);
    }
    let a = score_predictions(&preds).unwrap();
    preds.reverse();
    let b = score_predictions(&preds).unwrap();
    for (x, y) in [(a.bleu, b.bleu), (a.meteor, b.meteor), (a.cider, b.cider), (a.rouge_l, b.rouge_l)] {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn identical_text_is_a_maximum() {
    let x = ["brace the core before the knees drift"];
    let y = ["brace the core as the knees drift inward"];
    assert!(bleu(&x, &x).unwrap() >= bleu(&x, &y).unwrap());
    assert!(meteor(&x, &x).unwrap() >= meteor(&x, &y).unwrap());
    assert!(rouge_l(&x, &x).unwrap() >= rouge_l(&x, &y).unwrap());
    let (xs, ys) = (["a b c d", "e f g h"], ["a b c x", "e f y h"]);
    assert!(cider(&xs, &xs).unwrap() >= cider(&xs, &ys).unwrap());
}

#[test]
fn untrained_model_guesses_quality() {
    let dir = tempfile::tempdir().unwrap();
    let config = desk_config(&["synthetic.samples_per_category=25", "model.decoder.max_len=8"]);
    let manifest = synthetic_manifest(&config, dir.path());
    let ids = all_ids(&manifest);
    assert_eq!(ids.len(), 100);
    let model = pipeline::build_model(&config, &manifest, pipeline::build_vocabulary(&manifest, &ids).unwrap()).unwrap();
    let encoders = Encoders::toy(&config.encoder).unwrap();
    let (report, preds) = pipeline::evaluate(&config, &model, &encoders, &manifest, &ids, &Default::default()).unwrap();
    assert_eq!(preds.len(), 100);
    assert!((report.quality_acc - 0.5).abs() <= 0.15, "quality acc {}", report.quality_acc);
}

proptest! {
    #[test]
    fn topk_is_monotone(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 6), 1..12), seed in 0usize..6) {
        let labels: Vec<usize> = (0..rows.len()).map(|i| (i + seed) % 6).collect();
        let mut prev = 0.0;
        for k in 1..=6 {
            let acc = topk_accuracy(&rows, &labels, k).unwrap();
            prop_assert!(acc >= prev);
            prev = acc;
        }
        prop_assert_eq!(prev, 1.0);
    }
}
