use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuConfig {
    pub max_order: usize,
    /// Add-one smoothing of higher-order precisions that have no matches.
    pub smooth: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_order: 4,
            smooth: false,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU in `[0, 100]` with one reference per candidate.
///
/// Clipped n-gram matches and totals are summed over the corpus. Orders with
/// no candidate n-grams at all are left out of the geometric mean, so a corpus
/// of short identical pairs still scores 100. The brevity penalty is
/// `exp(1 - r/c)` when the candidate corpus is shorter than the references.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>], config: BleuConfig) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Empty("BLEU needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::dim("BLEU references", candidates.len(), references.len()));
    }
    let max_order = config.max_order.max(1);
    let mut matches = vec![0usize; max_order];
    let mut totals = vec![0usize; max_order];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);

    for (cand, reference) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += reference.len();
        for n in 1..=max_order {
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(cand, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 0..max_order {
        if totals[n] == 0 {
            continue;
        }
        let precision = if matches[n] == 0 {
            if config.smooth && n > 0 {
                1.0 / (totals[n] + 1) as f64
            } else {
                return Ok(0.0);
            }
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += precision.ln();
        orders += 1;
    }
    let brevity = if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * brevity * (log_sum / orders as f64).exp())
}

/// Longest common subsequence length by dynamic programming.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure `(1+β²)PR / (R + β²P)` over the LCS; 0 when degenerate.
pub fn rouge_l(candidate: &[String], reference: &[String], beta: f64) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean ROUGE-L over candidate/reference pairs.
pub fn rouge_l_corpus(candidates: &[Vec<String>], references: &[Vec<String>], beta: f64) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::dim("ROUGE-L references", candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| rouge_l(c, r, beta))
        .sum();
    Ok(total / candidates.len() as f64)
}
