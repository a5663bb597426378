//! Slow, literal metric implementations used as oracles. Nothing here shares
//! code with the library beyond the documented definitions.

/// Five frozen caption pairs: hypothesis, reference.
pub const FIXTURE: [(&str, &str); 5] = [
    ("The knees drift inward as he lifts.", "The knee drifts inward during the lift."),
    ("Keep the back flat and brace the core.", "Keep your back flat, brace your core."),
    ("Arms bend too early so the bar stalls.", "The arms bend early and the bar stalls at the chest."),
    ("Hips rise before the shoulders.", "The hips rise before the shoulders do."),
    ("Good depth and steady tempo.", "Steps are correct; depth and tempo look steady."),
];

/// Category logits and labels for the top-k part of the fixture.
pub fn topk_fixture() -> (Vec<Vec<f64>>, Vec<usize>) {
    let logits = vec![
        vec![0.9, 0.1, 0.3, 0.2, 0.0, -0.5],
        vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        vec![2.0, 1.0, 0.0, -1.0, -2.0, -3.0],
        vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        vec![-1.0, 3.0, 2.5, 0.2, 0.1, 0.0],
    ];
    (logits, vec![0, 0, 2, 4, 5])
}

/// Hand-written stem table for every inflected word in [`FIXTURE`]; all other
/// words stem to themselves.
pub fn stem(word: &str) -> String {
    let table = [
        ("knees", "knee"),
        ("drifts", "drift"),
        ("drift", "drift"),
        ("lifts", "lift"),
        ("arms", "arm"),
        ("stalls", "stall"),
        ("hips", "hip"),
        ("shoulders", "shoulder"),
        ("steps", "step"),
        ("bends", "bend"),
    ];
    table.iter().find(|(w, _)| *w == word).map_or_else(|| word.to_string(), |(_, s)| s.to_string())
}

pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut w = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() {
                w.extend(c.to_lowercase());
            }
        }
        if !w.is_empty() {
            out.push(w);
        }
    }
    out
}

fn ngrams(t: &[String], n: usize) -> Vec<Vec<String>> {
    if t.len() < n {
        return Vec::new();
    }
    (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn bleu(pairs: &[(&str, &str)]) -> f64 {
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (mut m, mut c) = (0usize, 0usize);
        for (h, r) in pairs {
            let (hg, rg) = (ngrams(&tokens(h), n), ngrams(&tokens(r), n));
            c += hg.len();
            for g in distinct(&hg) {
                m += count(&hg, &g).min(count(&rg, &g));
            }
        }
        if n == 1 && m == 0 {
            return 0.0;
        }
        log_sum += if n == 1 { (m as f64 / c as f64).ln() } else { ((m + 1) as f64 / (c + 1) as f64).ln() };
    }
    let hl: usize = pairs.iter().map(|(h, _)| tokens(h).len()).sum();
    let rl: usize = pairs.iter().map(|(_, r)| tokens(r).len()).sum();
    let bp = if hl > rl { 1.0 } else { (1.0 - rl as f64 / hl as f64).exp() };
    bp * (log_sum / 4.0).exp()
}

/// Longest common subsequence by memoized recursion from the front.
fn lcs(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] { 1 + go(a, b, i + 1, j + 1, memo) } else { go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo)) };
        memo[i][j] = Some(v);
        v
    }
    go(a, b, 0, 0, &mut vec![vec![None; b.len()]; a.len()])
}

pub fn rouge_l(pairs: &[(&str, &str)]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    pairs
        .iter()
        .map(|(h, r)| {
            let (h, r) = (tokens(h), tokens(r));
            let l = lcs(&h, &r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let (p, rec) = (l / h.len() as f64, l / r.len() as f64);
            (1.0 + beta2) * p * rec / (rec + beta2 * p)
        })
        .sum::<f64>()
        / pairs.len() as f64
}

pub fn cider(pairs: &[(&str, &str)]) -> f64 {
    let refs: Vec<Vec<String>> = pairs.iter().map(|(_, r)| tokens(r)).collect();
    let n_docs = refs.len() as f64;
    let mut total = 0.0;
    for (h, r) in pairs {
        let (h, r) = (tokens(h), tokens(r));
        let mut per_n = 0.0;
        for n in 1..=4 {
            let (hg, rg) = (ngrams(&h, n), ngrams(&r, n));
            let idf = |g: &[String]| {
                let df = refs.iter().filter(|doc| ngrams(doc, n).iter().any(|x| x.as_slice() == g)).count().max(1) as f64;
                if n_docs == 1.0 {
                    1.0
                } else {
                    (n_docs / df).ln()
                }
            };
            let vocab = distinct(&[hg.clone(), rg.clone()].concat());
            let vh: Vec<f64> = vocab.iter().map(|g| count(&hg, g) as f64 * idf(g)).collect();
            let vr: Vec<f64> = vocab.iter().map(|g| count(&rg, g) as f64 * idf(g)).collect();
            let nh = vh.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nr = vr.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nh == 0.0 || nr == 0.0 {
                continue;
            }
            let dot: f64 = vh.iter().zip(&vr).map(|(x, y)| x.min(*y) * y).sum();
            let delta = h.len() as f64 - r.len() as f64;
            per_n += dot / (nh * nr) * (-(delta * delta) / 72.0).exp();
        }
        total += 10.0 * per_n / 4.0;
    }
    total / pairs.len() as f64
}

fn chunks(alignment: &[(usize, usize)]) -> usize {
    let mut a = alignment.to_vec();
    a.sort();
    (0..a.len()).filter(|&k| k == 0 || a[k - 1].0 + 1 != a[k].0 || a[k - 1].1 + 1 != a[k].1).count()
}

/// Every partial injective matching over `pairs`, as lists of chosen pairs.
fn all_matchings(pairs: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    let mut out = vec![Vec::new()];
    for &(i, j) in pairs {
        let extended: Vec<Vec<(usize, usize)>> = out
            .iter()
            .filter(|m| m.iter().all(|&(a, b)| a != i && b != j))
            .map(|m| {
                let mut m = m.clone();
                m.push((i, j));
                m
            })
            .collect();
        out.extend(extended);
    }
    out
}

pub fn meteor_pair(h: &[String], r: &[String]) -> f64 {
    let mut alignment: Vec<(usize, usize)> = Vec::new();
    for stage in 0..2 {
        let key = |w: &String| if stage == 0 { w.clone() } else { stem(w) };
        let free: Vec<(usize, usize)> = (0..h.len())
            .flat_map(|i| (0..r.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| alignment.iter().all(|&(a, b)| a != i && b != j) && key(&h[i]) == key(&r[j]))
            .collect();
        let candidates = all_matchings(&free);
        let size = candidates.iter().map(Vec::len).max().unwrap_or(0);
        let best = candidates
            .into_iter()
            .filter(|m| m.len() == size)
            .min_by_key(|m| chunks(&[alignment.clone(), m.clone()].concat()))
            .unwrap_or_default();
        alignment.extend(best);
    }
    let m = alignment.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let (p, rec) = (m / h.len() as f64, m / r.len() as f64);
    let fmean = 10.0 * p * rec / (rec + 9.0 * p);
    fmean * (1.0 - 0.5 * (chunks(&alignment) as f64 / m).powi(3))
}

pub fn meteor(pairs: &[(&str, &str)]) -> f64 {
    pairs.iter().map(|(h, r)| meteor_pair(&tokens(h), &tokens(r))).sum::<f64>() / pairs.len() as f64
}

/// Rank by sorting indices on (score descending, index ascending).
pub fn topk(logits: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(row, label)| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            idx[..k.min(row.len())].contains(label)
        })
        .count();
    hits as f64 / labels.len() as f64
}
