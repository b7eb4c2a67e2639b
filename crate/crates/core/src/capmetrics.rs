//! Caption scores: corpus BLEU-4, exact-match METEOR, ROUGE-L, and CIDEr.

use std::collections::{BTreeMap, HashMap};

use crate::error::{arg, Result};
use crate::scenegen::{BOS, EOC, PAD};

/// Sentence-level BLEU stands in this value for a zero n-gram precision.
pub const SENTENCE_BLEU_EPS: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;

/// A candidate and its references, lowercased with special tokens removed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

fn normalize<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| *t != PAD && *t != EOC && *t != BOS)
        .map(str::to_lowercase)
        .collect()
}

impl EvalPair {
    pub fn new<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], references: &[R]) -> Result<Self> {
        if references.is_empty() {
            return arg("a pair needs at least one reference");
        }
        Ok(Self {
            candidate: normalize(candidate),
            references: references.iter().map(|r| normalize(r.as_ref())).collect(),
        })
    }

    pub fn single<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Self {
        Self::new(candidate, &[reference]).expect("one reference")
    }

    fn reference(&self) -> &[String] {
        &self.references[0]
    }
}

fn ngrams(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped n-gram matches and candidate n-gram total for one pair.
fn clipped_counts(pair: &EvalPair, n: usize) -> (usize, usize) {
    let cand = ngrams(&pair.candidate, n);
    let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
    for r in &pair.references {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, pair.candidate.len().saturating_sub(n - 1))
}

/// Reference length closest to the candidate's, shorter on ties.
fn closest_ref_len(pair: &EvalPair) -> usize {
    let c = pair.candidate.len() as isize;
    pair.references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| ((l as isize - c).abs(), l))
        .unwrap_or(0)
}

fn bleu_from(matched: [usize; 4], total: [usize; 4], c: usize, r: usize, eps: Option<f64>) -> f64 {
    if c == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if matched[n] == 0 || total[n] == 0 {
            match eps {
                Some(e) => e,
                None => return 0.0,
            }
        } else {
            matched[n] as f64 / total[n] as f64
        };
        log_sum += p.ln() / 4.0;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_sum.exp()
}

/// Corpus BLEU-4: n-gram statistics summed over pairs, no smoothing.
pub fn bleu4(corpus: &[EvalPair]) -> Result<f64> {
    if corpus.is_empty() {
        return arg("BLEU of an empty corpus");
    }
    let (mut matched, mut total) = ([0; 4], [0; 4]);
    let (mut c, mut r) = (0, 0);
    for pair in corpus {
        for n in 0..4 {
            let (m, t) = clipped_counts(pair, n + 1);
            matched[n] += m;
            total[n] += t;
        }
        c += pair.candidate.len();
        r += closest_ref_len(pair);
    }
    Ok(bleu_from(matched, total, c, r, None))
}

/// BLEU-4 of one pair, with zero precisions replaced by a tiny constant.
pub fn sentence_bleu(pair: &EvalPair) -> f64 {
    let (mut matched, mut total) = ([0; 4], [0; 4]);
    for n in 0..4 {
        (matched[n], total[n]) = clipped_counts(pair, n + 1);
    }
    bleu_from(
        matched,
        total,
        pair.candidate.len(),
        closest_ref_len(pair),
        Some(SENTENCE_BLEU_EPS),
    )
}

/// Most matches, then fewest chunks, over exact one-to-one alignments.
fn best_alignment(cand: &[String], refr: &[String]) -> (usize, usize) {
    type Key = (usize, Vec<bool>, Option<usize>);
    fn go(
        i: usize,
        used: &mut Vec<bool>,
        prev: Option<usize>,
        cand: &[String],
        refr: &[String],
        memo: &mut HashMap<Key, (usize, usize)>,
    ) -> (usize, usize) {
        if i == cand.len() {
            return (0, 0);
        }
        let key = (i, used.clone(), prev);
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let better = |a: (usize, usize), b: (usize, usize)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
        let mut best = go(i + 1, used, None, cand, refr, memo);
        for j in 0..refr.len() {
            if used[j] || refr[j] != cand[i] {
                continue;
            }
            used[j] = true;
            let (m, ch) = go(i + 1, used, Some(j), cand, refr, memo);
            used[j] = false;
            let new_chunk = !(j > 0 && prev == Some(j - 1));
            let here = (m + 1, ch + new_chunk as usize);
            if better(here, best) {
                best = here;
            }
        }
        memo.insert(key, best);
        best
    }
    go(0, &mut vec![false; refr.len()], None, cand, refr, &mut HashMap::new())
}

/// METEOR with exact unigram matching against the first reference.
pub fn meteor(pair: &EvalPair) -> f64 {
    let (cand, refr) = (&pair.candidate, pair.reference());
    let (m, chunks) = best_alignment(cand, refr);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / refr.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS F-measure against the first reference, `β = 1.2`.
pub fn rouge_l(pair: &EvalPair) -> f64 {
    let (cand, refr) = (&pair.candidate, pair.reference());
    let l = lcs_len(cand, refr);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / refr.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * r * p / (r + b2 * p)
}

/// Corpus CIDEr, scaled to `[0, 10]`.
///
/// Document frequencies come from the references: `idf(g) = ln(N / df(g))`
/// with `N` the number of pairs. For each order, a candidate's TF-IDF vector
/// is clipped by the reference's in the dot product; identical sentences
/// therefore score exactly 1 per order. Orders whose vectors vanish score 0,
/// which makes a one-pair corpus score 0.
pub fn cider(corpus: &[EvalPair]) -> Result<f64> {
    if corpus.is_empty() {
        return arg("CIDEr of an empty corpus");
    }
    let n_docs = corpus.len() as f64;
    let mut df: Vec<BTreeMap<&[String], usize>> = vec![BTreeMap::new(); 4];
    for pair in corpus {
        for (n, table) in df.iter_mut().enumerate() {
            let mut seen: Vec<&[String]> = pair
                .references
                .iter()
                .flat_map(|r| ngrams(r, n + 1).into_keys())
                .collect();
            seen.sort();
            seen.dedup();
            for g in seen {
                *table.entry(g).or_insert(0) += 1;
            }
        }
    }
    let idf = |n: usize, g: &[String]| (n_docs / df[n].get(g).copied().unwrap_or(0).max(1) as f64).ln();
    let mut total = 0.0;
    for pair in corpus {
        let mut score = 0.0;
        for n in 0..4 {
            let a = ngrams(&pair.candidate, n + 1);
            let mut per_ref = 0.0;
            for r in &pair.references {
                let b = ngrams(r, n + 1);
                let norm_a: f64 = a.iter().map(|(g, &c)| (c as f64 * idf(n, g)).powi(2)).sum();
                let norm_b: f64 = b.iter().map(|(g, &c)| (c as f64 * idf(n, g)).powi(2)).sum();
                let dot: f64 = a
                    .iter()
                    .filter_map(|(g, &c)| {
                        b.get(g).map(|&rc| {
                            let w = idf(n, g);
                            (c.min(rc) as f64 * w) * (rc as f64 * w)
                        })
                    })
                    .sum();
                let denom = (norm_a * norm_b).sqrt();
                if denom > 0.0 {
                    per_ref += dot / denom;
                }
            }
            score += per_ref / pair.references.len() as f64;
        }
        total += 10.0 / 4.0 * score;
    }
    Ok(total / corpus.len() as f64)
}

/// All four scores in the usual table order.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricRow {
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

/// Corpus BLEU-4 and CIDEr, with METEOR and ROUGE-L averaged over pairs.
pub fn score_corpus(corpus: &[EvalPair]) -> Result<MetricRow> {
    let n = corpus.len() as f64;
    Ok(MetricRow {
        bleu4: bleu4(corpus)?,
        meteor: corpus.iter().map(meteor).sum::<f64>() / n,
        rouge_l: corpus.iter().map(rouge_l).sum::<f64>() / n,
        cider: cider(corpus)?,
    })
}
