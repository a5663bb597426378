use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{EfaError, Result};

/// Disjoint train/val/test partition of sample ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn part(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(EfaError::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// Split sizes for `n` records: train and val are `round(0.70 n)` and
/// `round(0.15 n)` (half rounds up), test takes the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (7 * n + 5) / 10;
    let val = ((15 * n + 50) / 100).min(n - train);
    (train, val, n - train - val)
}

/// Seeded uniform (unstratified) 70/15/15 split.
pub fn split_dataset(manifest: &DatasetManifest, seed: u64) -> Result<SplitAssignment> {
    let n = manifest.records.len();
    if n < 3 {
        return Err(EfaError::InvalidArgument(format!("cannot split {n} records; need at least 3")));
    }
    let mut ids: Vec<String> = manifest.records.iter().map(|r| r.sample_id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, val, _) = split_sizes(n);
    let test = ids.split_off(train + val);
    let val_ids = ids.split_off(train);
    Ok(SplitAssignment { seed, train: ids, val: val_ids, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::tests::{entry, record};
    use crate::data::manifest::Quality;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn manifest(n: usize) -> DatasetManifest {
        let records = (0..n).map(|i| record(&format!("s{i:04}"), i % 2, Quality::Standard)).collect();
        DatasetManifest::new(records, vec![entry(0), entry(1)], 2).unwrap()
    }

    #[test]
    fn twenty_records() {
        let s = split_dataset(&manifest(20), 0).unwrap();
        assert_eq!(s.sizes(), (14, 3, 3));
    }

    #[test]
    fn full_corpus_sizes_follow_round_to_nearest() {
        // Independent route: round half up on exact rationals.
        let n = 3392u64;
        let round = |num: u64, den: u64| (2 * num + den) / (2 * den);
        let train = round(70 * n, 100);
        let val = round(15 * n, 100);
        assert_eq!((train, val, n - train - val), (2374, 509, 509));
        assert_eq!(split_sizes(3392), (2374, 509, 509));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let m = manifest(37);
        assert_eq!(split_dataset(&m, 5).unwrap(), split_dataset(&m, 5).unwrap());
        assert_ne!(split_dataset(&m, 5).unwrap(), split_dataset(&m, 6).unwrap());
    }

    #[test]
    fn too_small_is_an_error() {
        assert!(split_dataset(&manifest(2), 0).is_err());
        assert_eq!(split_dataset(&manifest(3), 0).unwrap().sizes().0, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn partitions_exhaustively(seed in any::<u64>(), n in 3usize..120) {
            let m = manifest(n);
            let s = split_dataset(&m, seed).unwrap();
            let all: BTreeSet<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
            let (tr, va, te) = s.sizes();
            let nf = n as f64;
            prop_assert!((tr as f64 - 0.70 * nf).abs() <= 1.0);
            prop_assert!((va as f64 - 0.15 * nf).abs() <= 1.0);
            prop_assert!((te as f64 - 0.15 * nf).abs() <= 1.0);
        }
    }
}
