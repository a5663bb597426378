//! Caption and classification metrics. Every caption metric first applies
//! [`metric_tokens`]: whitespace split, drop every non-alphanumeric character,
//! lowercase, discard empty tokens. Scores are in `[0, 1]` except CIDEr, which
//! keeps its conventional factor of 10.

use std::collections::{BTreeMap, BTreeSet};

use rust_stemmers::{Algorithm, Stemmer};

use crate::error::{EfaError, Result};

pub const BLEU_MAX_N: usize = 4;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;
pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_GAMMA: f64 = 0.5;
pub const METEOR_BETA: f64 = 3.0;
/// Search nodes per alignment stage before falling back to in-order pairing.
const METEOR_SEARCH_BUDGET: usize = 200_000;

pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect()
}

type Tokenized = Vec<Vec<String>>;

fn check_corpus<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<(Tokenized, Tokenized)> {
    if hyps.is_empty() {
        return Err(EfaError::InvalidArgument("empty corpus".into()));
    }
    if hyps.len() != refs.len() {
        return Err(EfaError::InvalidArgument(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    let tok = |v: &[S]| v.iter().map(|s| metric_tokens(s.as_ref())).collect();
    Ok((tok(hyps), tok(refs)))
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 against one reference per hypothesis. Unigram precision is
/// unsmoothed; orders 2-4 use add-one smoothing `(m + 1) / (c + 1)`. The
/// brevity penalty uses total hypothesis and reference lengths.
pub fn bleu<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    let (h, r) = check_corpus(hyps, refs)?;
    let mut matches = [0usize; BLEU_MAX_N];
    let mut totals = [0usize; BLEU_MAX_N];
    for (hyp, reference) in h.iter().zip(&r) {
        for n in 1..=BLEU_MAX_N {
            let hc = ngram_counts(hyp, n);
            let rc = ngram_counts(reference, n);
            matches[n - 1] += hc.iter().map(|(g, &c)| c.min(*rc.get(g).unwrap_or(&0))).sum::<usize>();
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    if matches[0] == 0 {
        return Ok(0.0);
    }
    let log_p: f64 = (0..BLEU_MAX_N)
        .map(|i| if i == 0 { (matches[0] as f64 / totals[0] as f64).ln() } else { ((matches[i] + 1) as f64 / (totals[i] + 1) as f64).ln() })
        .sum::<f64>()
        / BLEU_MAX_N as f64;
    let c = h.iter().map(Vec::len).sum::<usize>() as f64;
    let rl = r.iter().map(Vec::len).sum::<usize>() as f64;
    let bp = if c > rl { 1.0 } else { (1.0 - rl / c).exp() };
    Ok(bp * log_p.exp())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence ROUGE-L F-measure with `beta = 1.2`.
pub fn rouge_l_pair(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let lcs = lcs_len(hyp, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / hyp.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean sentence ROUGE-L over the corpus.
pub fn rouge_l<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    let (h, r) = check_corpus(hyps, refs)?;
    Ok(h.iter().zip(&r).map(|(a, b)| rouge_l_pair(a, b)).sum::<f64>() / h.len() as f64)
}

/// CIDEr-D with one reference per hypothesis. Document frequencies come from
/// the reference corpus; `idf = ln(N) - ln(df)`, or 1 when `N = 1`.
pub fn cider<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    let (h, r) = check_corpus(hyps, refs)?;
    let n_docs = r.len();
    let mut total = 0.0;
    let mut df: Vec<BTreeMap<&[String], usize>> = vec![BTreeMap::new(); BLEU_MAX_N];
    for reference in &r {
        for n in 1..=BLEU_MAX_N {
            for g in ngram_counts(reference, n).into_keys() {
                *df[n - 1].entry(g).or_insert(0) += 1;
            }
        }
    }
    let idf = |n: usize, g: &[String]| -> f64 {
        if n_docs == 1 {
            1.0
        } else {
            (n_docs as f64).ln() - (df[n - 1].get(g).copied().unwrap_or(0).max(1) as f64).ln()
        }
    };
    for (hyp, reference) in h.iter().zip(&r) {
        let delta = hyp.len() as f64 - reference.len() as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        let mut score = 0.0;
        for n in 1..=BLEU_MAX_N {
            let vh: BTreeMap<&[String], f64> = ngram_counts(hyp, n).into_iter().map(|(g, c)| (g, c as f64 * idf(n, g))).collect();
            let vr: BTreeMap<&[String], f64> = ngram_counts(reference, n).into_iter().map(|(g, c)| (g, c as f64 * idf(n, g))).collect();
            let norm = |v: &BTreeMap<&[String], f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
            let (nh, nr) = (norm(&vh), norm(&vr));
            if nh == 0.0 || nr == 0.0 {
                continue;
            }
            let dot: f64 = vh.iter().map(|(g, &x)| vr.get(g).map_or(0.0, |&y| x.min(y) * y)).sum();
            score += dot / (nh * nr) * penalty;
        }
        total += score / BLEU_MAX_N as f64 * 10.0;
    }
    Ok(total / h.len() as f64)
}

/// Matching stages applied in order; later stages only see tokens left
/// unmatched by earlier ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeteorStage {
    Exact,
    Stem,
}

pub const METEOR_STAGES: [MeteorStage; 2] = [MeteorStage::Exact, MeteorStage::Stem];

/// Name of the configured matcher set, recorded in reports.
pub const METEOR_LABEL: &str = "meteor(exact+stem)";

/// Sentence METEOR. Each stage picks, among maximum matchings of its
/// equivalence classes, one with the fewest chunks over the alignment so far.
/// Score is `Fmean * (1 - 0.5 * (chunks / m)^3)` with `Fmean = 10PR / (R + 9P)`.
pub fn meteor_pair(hyp: &[String], reference: &[String], stemmer: &Stemmer) -> f64 {
    if hyp.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let mut alignment: Vec<(usize, usize)> = Vec::new();
    for stage in METEOR_STAGES {
        let key = |t: &String| -> String {
            match stage {
                MeteorStage::Exact => t.clone(),
                MeteorStage::Stem => stemmer.stem(t).into_owned(),
            }
        };
        let used_h: BTreeSet<usize> = alignment.iter().map(|a| a.0).collect();
        let used_r: BTreeSet<usize> = alignment.iter().map(|a| a.1).collect();
        let hk: Vec<Option<String>> = hyp.iter().enumerate().map(|(i, t)| (!used_h.contains(&i)).then(|| key(t))).collect();
        let rk: Vec<Option<String>> = reference.iter().enumerate().map(|(j, t)| (!used_r.contains(&j)).then(|| key(t))).collect();
        let chosen = best_stage_matching(&hk, &rk, &alignment);
        alignment.extend(chosen);
    }
    let m = alignment.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let frag = count_chunks(&alignment) as f64 / m as f64;
    fmean * (1.0 - METEOR_GAMMA * frag.powf(METEOR_BETA))
}

/// Mean sentence METEOR over the corpus.
pub fn meteor<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<f64> {
    let (h, r) = check_corpus(hyps, refs)?;
    let stemmer = Stemmer::create(Algorithm::English);
    Ok(h.iter().zip(&r).map(|(a, b)| meteor_pair(a, b, &stemmer)).sum::<f64>() / h.len() as f64)
}

/// Number of runs of matches contiguous and in the same order on both sides.
pub fn count_chunks(alignment: &[(usize, usize)]) -> usize {
    let mut sorted = alignment.to_vec();
    sorted.sort_unstable();
    let mut chunks = 0;
    for (k, &(i, j)) in sorted.iter().enumerate() {
        if k == 0 || !(sorted[k - 1].0 + 1 == i && sorted[k - 1].1 + 1 == j) {
            chunks += 1;
        }
    }
    chunks
}

fn best_stage_matching(hk: &[Option<String>], rk: &[Option<String>], fixed: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut ref_by_key: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, k) in rk.iter().enumerate() {
        if let Some(k) = k {
            ref_by_key.entry(k.as_str()).or_default().push(j);
        }
    }
    let candidates: Vec<(usize, Vec<usize>)> =
        hk.iter().enumerate().filter_map(|(i, k)| k.as_ref().and_then(|k| ref_by_key.get(k.as_str())).map(|js| (i, js.clone()))).collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    // Maximum matching size: per key, the smaller of the two occurrence counts.
    let mut hyp_per_key: BTreeMap<&str, usize> = BTreeMap::new();
    for k in hk.iter().flatten() {
        if ref_by_key.contains_key(k.as_str()) {
            *hyp_per_key.entry(k.as_str()).or_default() += 1;
        }
    }
    let target: usize = hyp_per_key.iter().map(|(k, &c)| c.min(ref_by_key[k].len())).sum();

    let mut search = StageSearch {
        candidates: &candidates,
        fixed,
        target,
        budget: METEOR_SEARCH_BUDGET,
        used: BTreeSet::new(),
        current: Vec::new(),
        best: None,
    };
    search.dfs(0);
    if search.budget > 0 {
        if let Some((_, best)) = search.best {
            return best;
        }
    }
    in_order_matching(hk, rk)
}

struct StageSearch<'a> {
    candidates: &'a [(usize, Vec<usize>)],
    fixed: &'a [(usize, usize)],
    target: usize,
    budget: usize,
    used: BTreeSet<usize>,
    current: Vec<(usize, usize)>,
    best: Option<(usize, Vec<(usize, usize)>)>,
}

impl StageSearch<'_> {
    fn dfs(&mut self, k: usize) {
        if self.budget == 0 {
            return;
        }
        self.budget -= 1;
        let remaining = self.candidates.len() - k;
        if self.current.len() + remaining < self.target {
            return;
        }
        if k == self.candidates.len() {
            let mut all = self.fixed.to_vec();
            all.extend_from_slice(&self.current);
            let chunks = count_chunks(&all);
            if self.best.as_ref().is_none_or(|(c, _)| chunks < *c) {
                self.best = Some((chunks, self.current.clone()));
            }
            return;
        }
        let (i, ref js) = self.candidates[k];
        for &j in js {
            if self.used.insert(j) {
                self.current.push((i, j));
                self.dfs(k + 1);
                self.current.pop();
                self.used.remove(&j);
            }
        }
        self.dfs(k + 1);
    }
}

/// The i-th occurrence of a key in the hypothesis pairs with its i-th occurrence in the reference.
fn in_order_matching(hk: &[Option<String>], rk: &[Option<String>]) -> Vec<(usize, usize)> {
    let mut queues: BTreeMap<&str, std::collections::VecDeque<usize>> = BTreeMap::new();
    for (j, k) in rk.iter().enumerate() {
        if let Some(k) = k {
            queues.entry(k.as_str()).or_default().push_back(j);
        }
    }
    hk.iter()
        .enumerate()
        .filter_map(|(i, k)| k.as_ref().and_then(|k| queues.get_mut(k.as_str())).and_then(|q| q.pop_front()).map(|j| (i, j)))
        .collect()
}

/// Fraction of rows whose label ranks in the top `k`. A label counts when
/// fewer than `k` classes score strictly higher or tie it at a lower index.
/// `k` is clipped to the number of classes.
pub fn topk_accuracy(logits: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(EfaError::InvalidArgument(format!("{} logit rows for {} labels", logits.len(), labels.len())));
    }
    if k == 0 {
        return Err(EfaError::InvalidArgument("k must be at least 1".into()));
    }
    let mut hits = 0usize;
    for (row, &label) in logits.iter().zip(labels) {
        if label >= row.len() {
            return Err(EfaError::InvalidArgument(format!("label {label} >= {} classes", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(EfaError::NonFinite("top-k logits".into()));
        }
        let v = row[label];
        let ahead = row.iter().enumerate().filter(|&(c, &x)| x > v || (x == v && c < label)).count();
        if ahead < k.min(row.len()) {
            hits += 1;
        }
    }
    Ok(hits as f64 / logits.len() as f64)
}
