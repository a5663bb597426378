//! Deterministic synthetic mini-datasets.
//!
//! Each category gets a distinct template explanation and its own lexicon
//! entry. Non-standard samples carry the same template with one extra
//! category-specific error clause inserted after the first sentence, so
//! category, quality and explanation text always agree. Visual features are
//! per-sample fixtures built from a category prototype, a quality prototype,
//! a per-frame temporal code and a little noise.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{ActionLexiconEntry, DatasetManifest, MediaRef, Quality, SampleRecord, Viewpoint, WorkoutMode};
use crate::error::{EfaError, Result};
use crate::features::FeatureMatrix;
use crate::tensor::Matrix;

const WORDS: &[&str] = &[
    "knee",
    "hip",
    "elbow",
    "wrist",
    "shoulder",
    "spine",
    "core",
    "grip",
    "stance",
    "heel",
    "toe",
    "chest",
    "neck",
    "scapula",
    "pelvis",
    "ankle",
    "lats",
    "glutes",
    "hamstrings",
    "quads",
    "forearm",
    "breath",
    "tempo",
    "depth",
    "bar",
    "cable",
    "handle",
    "bench",
    "plate",
    "dumbbell",
    "kettlebell",
    "band",
    "lockout",
    "descent",
    "ascent",
    "pause",
    "brace",
    "hinge",
    "squat",
    "press",
    "pull",
    "row",
    "curl",
    "extension",
    "rotation",
    "alignment",
    "balance",
    "rhythm",
    "range",
    "posture",
    "torso",
    "head",
    "gaze",
    "arch",
    "midline",
    "footing",
    "lift",
    "drive",
    "stretch",
    "squeeze",
    "release",
    "hold",
    "path",
    "angle",
];

/// Parameters of a synthetic dataset. The `[synthetic]` config block maps onto this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub categories: usize,
    pub samples_per_category: usize,
    pub vocab_size: usize,
    /// Filled from the run's root seed.
    #[serde(skip)]
    pub seed: u64,
    pub frames_per_video: usize,
    pub visual_dim: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { categories: 4, samples_per_category: 6, vocab_size: 48, seed: 7, frames_per_video: 6, visual_dim: 16 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub features: BTreeMap<String, FeatureMatrix>,
    /// The clause inserted into non-standard explanations, per category.
    pub error_clauses: BTreeMap<usize, String>,
}

fn vocabulary(size: usize) -> Vec<String> {
    (0..size)
        .map(|i| match WORDS.get(i) {
            Some(w) => (*w).to_string(),
            None => format!("term{i}"),
        })
        .collect()
}

fn sentence(words: &[&str]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(0..1) {
        let upper = first.to_uppercase();
        s.replace_range(0..1, &upper);
    }
    s + "."
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    for (name, v) in [
        ("categories", spec.categories),
        ("samples_per_category", spec.samples_per_category),
        ("vocab_size", spec.vocab_size),
        ("frames_per_video", spec.frames_per_video),
        ("visual_dim", spec.visual_dim),
    ] {
        if v == 0 {
            return Err(EfaError::Config(format!("synthetic.{name} must be at least 1")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = vocabulary(spec.vocab_size);
    let pick = |rng: &mut ChaCha8Rng| -> String { vocab.choose(rng).cloned().expect("vocab is non-empty") };

    let d = spec.visual_dim;
    let temporal: Vec<Vec<f64>> = (0..spec.frames_per_video).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let quality_proto: [Vec<f64>; 2] = [(); 2].map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());

    let mut lexicon = Vec::new();
    let mut records = Vec::new();
    let mut features = BTreeMap::new();
    let mut error_clauses = BTreeMap::new();

    for c in 0..spec.categories {
        let name = format!("exercise{c}");
        let mode = if c % 2 == 0 { WorkoutMode::Manual } else { WorkoutMode::Apparatus };
        let w: Vec<String> = (0..12).map(|_| pick(&mut rng)).collect();
        let steps = (0..5).map(|i| sentence(&["set", "the", &w[i], "and", &w[(i + 5) % 12], "before", "moving"])).collect();
        lexicon.push(ActionLexiconEntry {
            category_id: c,
            category_name: name.clone(),
            steps,
            general_instruction: sentence(&["perform", "the", &name, "with", "a", "controlled", &w[10]]),
        });

        let opening = sentence(&["the", &name, "begins", "with", "the", &w[0], "and", &w[1]]);
        let middle = sentence(&["keep", "the", &w[2], "steady", "through", "the", &w[3]]);
        let closing = sentence(&["finish", "with", "the", &w[4], "under", "control"]);
        let e: Vec<String> = (0..3).map(|_| pick(&mut rng)).collect();
        let clause = sentence(&["however", "the", &e[0], "collapses", "because", "the", &e[1], "leads", "the", &e[2]]);
        error_clauses.insert(c, clause.clone());

        let category_proto: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for s in 0..spec.samples_per_category {
            let quality = if s % 2 == 0 { Quality::Standard } else { Quality::NonStandard };
            let cot_text = match quality {
                Quality::Standard => format!("{opening} {middle} {closing}"),
                Quality::NonStandard => format!("{opening} {clause} {middle} {closing}"),
            };
            let sample_id = format!("syn-c{c:03}-s{s:03}");
            let q = usize::from(quality == Quality::NonStandard);
            let values = Matrix::from_fn(spec.frames_per_video, d, |t, j| {
                category_proto[j] + 0.8 * quality_proto[q][j] + 0.3 * temporal[t][j] + rng.random_range(-0.05..0.05)
            });
            features.insert(sample_id.clone(), FeatureMatrix::new(values)?);
            let frame_count = 48 + rng.random_range(0..96usize);
            records.push(SampleRecord {
                media_ref: MediaRef::Features { path: format!("features/{sample_id}.feat").into() },
                sample_id,
                category_id: c,
                category_name: name.clone(),
                workout_mode: mode,
                workout_type: name.clone(),
                quality,
                viewpoint: [Viewpoint::Front, Viewpoint::Side, Viewpoint::Back][s % 3],
                duration_s: frame_count as f64 / 24.0,
                frame_count,
                cot_text,
            });
        }
    }

    let manifest = DatasetManifest::new(records, lexicon, spec.categories)?;
    Ok(SyntheticDataset { manifest, features, error_clauses })
}

impl SyntheticDataset {
    /// Write `manifest.json` and `features/*.feat` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        self.manifest.save(&dir.join("manifest.json"))?;
        for (id, f) in &self.features {
            f.write_fixture(&dir.join("features").join(format!("{id}.feat")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_spec() {
        let spec = SyntheticSpec { categories: 4, samples_per_category: 6, seed: 7, ..Default::default() };
        let ds = generate_synthetic_dataset(&spec).unwrap();
        assert_eq!(ds.manifest.len(), 24);
        assert_eq!(ds.manifest.num_categories, 4);
        assert_eq!(ds.features.len(), 24);
        assert!(ds.features.values().all(|f| f.rows() == 6 && f.dim() == 16));
    }

    #[test]
    fn byte_identical_for_same_spec() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic_dataset(&spec).unwrap();
        let b = generate_synthetic_dataset(&spec).unwrap();
        assert_eq!(a.manifest.to_json(), b.manifest.to_json());
        let fa: Vec<String> = a.features.values().map(FeatureMatrix::to_fixture_string).collect();
        let fb: Vec<String> = b.features.values().map(FeatureMatrix::to_fixture_string).collect();
        assert_eq!(fa, fb);
    }

    #[test]
    fn quality_variants_differ_only_by_the_clause() {
        let spec = SyntheticSpec { categories: 2, samples_per_category: 2, ..Default::default() };
        let ds = generate_synthetic_dataset(&spec).unwrap();
        for c in 0..2 {
            let texts: Vec<&SampleRecord> = ds.manifest.records.iter().filter(|r| r.category_id == c).collect();
            let std = &texts.iter().find(|r| r.quality == Quality::Standard).unwrap().cot_text;
            let non = &texts.iter().find(|r| r.quality == Quality::NonStandard).unwrap().cot_text;
            // String diff: strip the longest common prefix and suffix; what remains
            // of the non-standard text is exactly the clause (plus its separator).
            let (a, b): (Vec<char>, Vec<char>) = (std.chars().collect(), non.chars().collect());
            let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
            let suffix = a[prefix..].iter().rev().zip(b[prefix..].iter().rev()).take_while(|(x, y)| x == y).count();
            assert_eq!(a.len(), prefix + suffix, "standard text must be fully shared");
            let inserted: String = b[prefix..b.len() - suffix].iter().collect();
            assert_eq!(inserted.trim(), ds.error_clauses[&c]);
        }
    }

    #[test]
    fn zero_sized_spec_is_rejected() {
        let spec = SyntheticSpec { vocab_size: 0, ..Default::default() };
        assert!(generate_synthetic_dataset(&spec).is_err());
    }

    #[test]
    fn categories_have_distinct_texts_even_with_one_word_vocab() {
        let spec = SyntheticSpec { categories: 3, samples_per_category: 1, vocab_size: 1, ..Default::default() };
        let ds = generate_synthetic_dataset(&spec).unwrap();
        let texts: std::collections::BTreeSet<&str> = ds.manifest.records.iter().map(|r| r.cot_text.as_str()).collect();
        assert_eq!(texts.len(), 3);
    }
}
