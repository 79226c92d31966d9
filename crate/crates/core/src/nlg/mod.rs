//! Report-quality metrics: BLEU, ROUGE-L, METEOR (exact-match only) and
//! CIDEr / CIDEr-D. All functions work on pre-tokenized sequences of any
//! hashable token type.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::hash::{BuildHasherDefault, Hash};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// Fixed-key hashing keeps iteration order, and so float summation order,
// identical from run to run.
type Map<K, V> = HashMap<K, V, BuildHasherDefault<DefaultHasher>>;
type Set<K> = HashSet<K, BuildHasherDefault<DefaultHasher>>;

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;

/// Counts of every contiguous n-gram of one order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGramCounter<'a, T: Eq + Hash> {
    n: usize,
    counts: Map<&'a [T], usize>,
}

impl<'a, T: Eq + Hash> NGramCounter<'a, T> {
    pub fn new(tokens: &'a [T], n: usize) -> Self {
        let mut counts = Map::default();
        if n > 0 && tokens.len() >= n {
            for gram in tokens.windows(n) {
                *counts.entry(gram).or_insert(0) += 1;
            }
        }
        NGramCounter { n, counts }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, gram: &[T]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [T], usize)> + '_ {
        self.counts.iter().map(|(g, c)| (*g, *c))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// BLEU-1 through BLEU-4.
    pub scores: [f64; 4],
    pub empty_candidate: bool,
}

/// Matched and total n-gram counts per order plus lengths, the sufficient
/// statistics of (corpus) BLEU.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct BleuStats {
    matched: [usize; 4],
    total: [usize; 4],
    candidate_len: usize,
    reference_len: usize,
}

fn bleu_stats<T: Eq + Hash, R: AsRef<[T]>>(candidate: &[T], references: &[R]) -> BleuStats {
    let mut stats = BleuStats { candidate_len: candidate.len(), ..BleuStats::default() };
    // Closest reference length, shorter wins a tie.
    stats.reference_len = references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&len| (len.abs_diff(candidate.len()), len))
        .unwrap_or(0);
    for n in 1..=4 {
        let cand = NGramCounter::new(candidate, n);
        let refs: Vec<NGramCounter<T>> = references.iter().map(|r| NGramCounter::new(r.as_ref(), n)).collect();
        for (gram, count) in cand.iter() {
            let max_ref = refs.iter().map(|r| r.get(gram)).max().unwrap_or(0);
            stats.matched[n - 1] += count.min(max_ref);
        }
        stats.total[n - 1] = cand.total();
    }
    stats
}

fn bleu_from_stats(s: &BleuStats) -> [f64; 4] {
    let mut out = [0.0; 4];
    if s.candidate_len == 0 {
        return out;
    }
    let bp = if s.candidate_len >= s.reference_len {
        1.0
    } else {
        (1.0 - s.reference_len as f64 / s.candidate_len as f64).exp()
    };
    let mut log_sum = 0.0;
    for k in 0..4 {
        if s.matched[k] == 0 || s.total[k] == 0 {
            // Every higher order includes this zero precision.
            break;
        }
        log_sum += (s.matched[k] as f64 / s.total[k] as f64).ln();
        out[k] = bp * (log_sum / (k + 1) as f64).exp();
    }
    out
}

fn check_references<R>(references: &[R]) -> Result<()> {
    if references.is_empty() {
        return Err(Error::contract("at least one reference is required"));
    }
    Ok(())
}

/// Sentence BLEU-1..4 with clipped precisions and the brevity penalty
/// against the closest reference length.
pub fn bleu<T: Eq + Hash, R: AsRef<[T]>>(candidate: &[T], references: &[R]) -> Result<BleuScore> {
    check_references(references)?;
    if references.iter().any(|r| r.as_ref().is_empty()) {
        return Err(Error::contract("references must be non-empty"));
    }
    let stats = bleu_stats(candidate, references);
    Ok(BleuScore { scores: bleu_from_stats(&stats), empty_candidate: candidate.is_empty() })
}

/// Corpus BLEU-1..4: clipped counts and lengths summed over the corpus
/// before taking precisions and the brevity penalty.
pub fn corpus_bleu<T: Eq + Hash, R: AsRef<[T]>>(candidates: &[Vec<T>], references: &[Vec<R>]) -> Result<[f64; 4]> {
    if candidates.len() != references.len() || candidates.is_empty() {
        return Err(Error::contract(format!(
            "{} candidates vs {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let mut total = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        check_references(r)?;
        let s = bleu_stats(c, r);
        for k in 0..4 {
            total.matched[k] += s.matched[k];
            total.total[k] += s.total[k];
        }
        total.candidate_len += s.candidate_len;
        total.reference_len += s.reference_len;
    }
    Ok(bleu_from_stats(&total))
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
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

/// LCS-based F-score with recall weighted by β = 1.2.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Exact-match unigram alignment: each candidate token maps to the first
/// unused identical reference token, scanning left to right.
fn align<T: Eq>(candidate: &[T], reference: &[T]) -> Vec<(usize, usize)> {
    let mut used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (i, c) in candidate.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j] == *c) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// METEOR without stemming or synonyms:
/// `F_mean · (1 − 0.5·(chunks/matches)³)` with `F_mean = 10PR/(R + 9P)`.
pub fn meteor_lite<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    let pairs = align(candidate, reference);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    // Pairs are in candidate order; a chunk continues while both sides advance by one.
    let mut chunks = 1;
    for w in pairs.windows(2) {
        if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
            chunks += 1;
        }
    }
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiderVariant {
    /// Clipped TF-IDF products and a Gaussian length penalty.
    #[default]
    D,
    /// Plain TF-IDF cosine.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiderScores {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

struct TfIdf<'a, T: Eq + Hash> {
    vec: Map<&'a [T], f64>,
    norm: f64,
}

fn tfidf<'a, T: Eq + Hash>(tokens: &'a [T], n: usize, df: &Map<&[T], usize>, log_n: f64) -> TfIdf<'a, T> {
    let counter = NGramCounter::new(tokens, n);
    let mut vec = Map::default();
    for (gram, count) in counter.iter() {
        let doc_freq = df.get(gram).copied().unwrap_or(0).max(1) as f64;
        vec.insert(gram, count as f64 * (log_n - doc_freq.ln()));
    }
    let norm = vec.values().map(|v| v * v).sum::<f64>().sqrt();
    TfIdf { vec, norm }
}

/// Corpus CIDEr (×10). Document frequencies come from the reference sets:
/// an n-gram counts once per sample whose references contain it.
pub fn cider<T: Eq + Hash, R: AsRef<[T]>>(
    candidates: &[Vec<T>],
    references: &[Vec<R>],
    variant: CiderVariant,
) -> Result<CiderScores> {
    if candidates.len() != references.len() {
        return Err(Error::contract(format!(
            "{} candidates vs {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.len() < 2 {
        return Err(Error::contract("CIDEr needs a corpus of at least two samples"));
    }
    for r in references {
        check_references(r)?;
    }
    let log_n = (candidates.len() as f64).ln();
    let mut per_sample = vec![0.0; candidates.len()];
    for n in 1..=4 {
        let mut df: Map<&[T], usize> = Map::default();
        for refs in references {
            let mut seen = Set::default();
            for r in refs {
                seen.extend(NGramCounter::new(r.as_ref(), n).iter().map(|(g, _)| g));
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (i, (cand, refs)) in candidates.iter().zip(references).enumerate() {
            let c = tfidf(cand, n, &df, log_n);
            let mut sum = 0.0;
            for r in refs {
                let r_tokens = r.as_ref();
                let rv = tfidf(r_tokens, n, &df, log_n);
                if c.norm == 0.0 || rv.norm == 0.0 {
                    continue;
                }
                let dot: f64 = c
                    .vec
                    .iter()
                    .map(|(g, &cv)| {
                        let r_val = rv.vec.get(g).copied().unwrap_or(0.0);
                        match variant {
                            CiderVariant::D => cv.min(r_val) * r_val,
                            CiderVariant::Plain => cv * r_val,
                        }
                    })
                    .sum();
                let mut sim = dot / (c.norm * rv.norm);
                if variant == CiderVariant::D {
                    let delta = cand.len() as f64 - r_tokens.len() as f64;
                    sim *= (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
                }
                sum += sim;
            }
            per_sample[i] += sum / refs.len() as f64;
        }
    }
    for s in &mut per_sample {
        *s *= 10.0 / 4.0;
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(CiderScores { per_sample, mean })
}

#[cfg(test)]
mod tests;
