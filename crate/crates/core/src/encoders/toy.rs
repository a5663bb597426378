//! Deterministic hashing encoders for desk-scale runs.
//!
//! Both map content hashes through a seeded pseudo-random projection: a hash
//! seeds a SplitMix64 stream and the stream's first `dim` draws form that
//! item's vector. Equal bytes always give equal vectors; the seed selects the
//! projection.

use super::{TextEncoder, TextFeatures, VisualEncoder, VisualInput};
use crate::data::ActionLexiconEntry;
use crate::error::{EfaError, Result};
use crate::features::FeatureMatrix;
use crate::tensor::Matrix;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const POSITION_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const GLOBAL_SALT: u64 = 0x5851_f42d_4c95_7f2d;
const POSITION_WEIGHT: f64 = 0.5;

pub(crate) fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Pseudo-random vector in `[-1, 1)^dim` keyed by `key`.
fn projection(key: u64, dim: usize) -> Vec<f64> {
    let mut state = key;
    (0..dim).map(|_| (splitmix(&mut state) >> 11) as f64 / (1u64 << 52) as f64 - 1.0).collect()
}

fn add_scaled(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

/// One token per frame: projection of the frame's content hash plus a temporal code.
#[derive(Clone, Debug)]
pub struct ToyVisualEncoder {
    dim: usize,
    seed: u64,
}

impl ToyVisualEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }
}

impl VisualEncoder for ToyVisualEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, input: &VisualInput) -> Result<FeatureMatrix> {
        match input {
            VisualInput::Fixture(f) => {
                if f.dim() != self.dim {
                    return Err(EfaError::Shape(format!("feature fixture has width {}, encoder expects {}", f.dim(), self.dim)));
                }
                Ok(f.clone())
            }
            VisualInput::Frames(frames) => {
                if frames.is_empty() {
                    return Err(EfaError::InvalidArgument("no frames to encode".into()));
                }
                let mut out = Matrix::zeros(frames.len(), self.dim);
                for (t, frame) in frames.iter().enumerate() {
                    let row = out.row_mut(t);
                    add_scaled(row, &projection(fnv1a(self.seed, frame), self.dim), 1.0);
                    let pos = projection(fnv1a(self.seed ^ POSITION_SALT, &(t as u64).to_le_bytes()), self.dim);
                    add_scaled(row, &pos, POSITION_WEIGHT);
                }
                FeatureMatrix::new(out)
            }
        }
    }
}

/// Bag of hashed subwords (each lowercased word and its boundary-marked
/// character trigrams), projected to `dim` and scaled by `1/sqrt(count)`.
/// Step rows also get a code for their position in the step list.
#[derive(Clone, Debug)]
pub struct ToyTextEncoder {
    dim: usize,
    seed: u64,
}

impl ToyTextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let mut count = 0usize;
        for word in text.split_whitespace() {
            let word: String = word.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect();
            if word.is_empty() {
                continue;
            }
            let mut add = |piece: &str| {
                add_scaled(&mut acc, &projection(fnv1a(self.seed, piece.as_bytes()), self.dim), 1.0);
                count += 1;
            };
            add(&word);
            let marked: Vec<char> = format!("<{word}>").chars().collect();
            for tri in marked.windows(3) {
                add(&tri.iter().collect::<String>());
            }
        }
        let norm = (count.max(1) as f64).sqrt();
        acc.iter_mut().for_each(|v| *v /= norm);
        acc
    }
}

impl TextEncoder for ToyTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, entry: &ActionLexiconEntry) -> Result<TextFeatures> {
        entry.validate()?;
        let mut steps = Matrix::zeros(entry.steps.len(), self.dim);
        for (i, step) in entry.steps.iter().enumerate() {
            let row = steps.row_mut(i);
            add_scaled(row, &self.embed(step), 1.0);
            let pos = projection(fnv1a(self.seed ^ POSITION_SALT, &(i as u64).to_le_bytes()), self.dim);
            add_scaled(row, &pos, POSITION_WEIGHT);
        }
        let mut global = self.embed(&entry.general_instruction);
        add_scaled(&mut global, &projection(fnv1a(self.seed ^ GLOBAL_SALT, b"global"), self.dim), POSITION_WEIGHT);
        Ok(TextFeatures { steps: FeatureMatrix::new(steps)?, global: FeatureMatrix::new(Matrix::row_vector(global))? })
    }
}
