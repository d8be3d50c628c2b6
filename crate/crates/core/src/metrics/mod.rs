//! Ranking, tagging, captioning and clinical-correctness metrics.

mod bootstrap;
mod clinical;
mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::TagSet;
use crate::error::{Error, Result};

pub use bootstrap::{bootstrap_curve, moving_average, BootstrapConfig, BootstrapCurve, RankMetric};
pub use clinical::clinical_pr;
pub use text::{bleu, lcs_len, rouge_l, rouge_l_corpus, BleuConfig};

/// Binary-gain DCG with `log2(i + 1)` discount over the first `k` positions.
fn dcg(relevance: &[bool], k: usize) -> f64 {
    relevance
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k of a relevance vector given in ranked order; 0 when nothing is relevant.
pub fn ndcg_at_k(relevance: &[bool], k: usize) -> f64 {
    let relevant = relevance.iter().filter(|&&r| r).count();
    let ideal: f64 = (0..relevant.min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        return 0.0;
    }
    dcg(relevance, k) / ideal
}

/// Fraction of relevant items among the first `min(k, n)`.
pub fn precision_at_k(relevance: &[bool], k: usize) -> f64 {
    let cutoff = k.min(relevance.len());
    if cutoff == 0 {
        return 0.0;
    }
    relevance[..cutoff].iter().filter(|&&r| r).count() as f64 / cutoff as f64
}

/// Per-exam F1 between gold and predicted tag sets, averaged over exams.
pub fn macro_f1(gold: &[TagSet], predicted: &[TagSet]) -> Result<f64> {
    if gold.len() != predicted.len() {
        return Err(Error::dim("macro_f1 inputs", gold.len(), predicted.len()));
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = gold.iter().zip(predicted).map(|(g, p)| set_f1(g, p)).sum();
    Ok(total / gold.len() as f64)
}

pub fn set_f1(gold: &TagSet, predicted: &TagSet) -> f64 {
    if gold.is_empty() || predicted.is_empty() {
        return 0.0;
    }
    let shared = gold.intersection(predicted).count() as f64;
    if shared == 0.0 {
        return 0.0;
    }
    let p = shared / predicted.len() as f64;
    let r = shared / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Serialized summary of one bootstrap curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub samples: usize,
    pub sample_size: usize,
    pub window: usize,
    /// Mean over draws, per k.
    pub mean: BTreeMap<usize, f64>,
    /// Standard deviation of the per-draw values, per k.
    pub stderr: BTreeMap<usize, f64>,
    /// Moving average of `mean` over k.
    pub smoothed: BTreeMap<usize, f64>,
}

impl From<&BootstrapCurve> for BootstrapSummary {
    fn from(c: &BootstrapCurve) -> Self {
        let map = |v: &[f64]| c.ks.iter().copied().zip(v.iter().copied()).collect();
        Self {
            samples: c.samples,
            sample_size: c.sample_size,
            window: c.window,
            mean: map(&c.mean),
            stderr: map(&c.stderr),
            smoothed: map(&c.smoothed),
        }
    }
}

/// A named metric value with optional per-k breakdown and bootstrap statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_k: Option<BTreeMap<usize, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSummary>,
}

impl MetricReport {
    pub fn scalar(metric: impl Into<String>, value: f64) -> Self {
        Self {
            metric: metric.into(),
            value,
            per_k: None,
            bootstrap: None,
        }
    }
}
