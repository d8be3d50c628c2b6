use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ndcg_at_k, precision_at_k};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMetric {
    Ndcg,
    Precision,
}

impl RankMetric {
    pub fn at_k(self, relevance: &[bool], k: usize) -> f64 {
        match self {
            RankMetric::Ndcg => ndcg_at_k(relevance, k),
            RankMetric::Precision => precision_at_k(relevance, k),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RankMetric::Ndcg => "ndcg",
            RankMetric::Precision => "precision",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub samples: usize,
    pub sample_size: usize,
    pub ks: Vec<usize>,
    pub window: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            sample_size: 100,
            ks: (10..=80).collect(),
            window: 5,
            seed: 0,
        }
    }
}

/// Per-k bootstrap statistics; all vectors are parallel to `ks`.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapCurve {
    pub ks: Vec<usize>,
    pub mean: Vec<f64>,
    /// Standard deviation of the per-draw metric (the bootstrap standard error).
    pub stderr: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub samples: usize,
    pub sample_size: usize,
    pub window: usize,
}

impl BootstrapCurve {
    pub fn at(&self, k: usize) -> Option<(f64, f64, f64)> {
        let i = self.ks.iter().position(|&x| x == k)?;
        Some((self.mean[i], self.stderr[i], self.smoothed[i]))
    }
}

/// Centered moving average, with the window truncated at both ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Bootstrap estimate of a ranking metric over a scored population.
///
/// `population` holds `(score, relevant)` pairs. Every draw samples
/// `sample_size` items with replacement using a stream seeded with
/// `seed + draw`, re-ranks them by descending score (ties by population
/// position) and evaluates the metric at each k. Draws run in parallel and
/// aggregate in draw order, so results do not depend on thread count.
pub fn bootstrap_curve(
    population: &[(f64, bool)],
    metric: RankMetric,
    config: &BootstrapConfig,
) -> Result<BootstrapCurve> {
    if population.len() < config.sample_size || population.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "population of {} is smaller than the bootstrap sample size {}",
            population.len(),
            config.sample_size
        )));
    }
    if config.samples == 0 || config.ks.is_empty() || config.ks.contains(&0) {
        return Err(Error::InvalidParameter(
            "bootstrap needs samples > 0 and positive ks".into(),
        ));
    }

    let draws: Vec<Vec<f64>> = (0..config.samples)
        .into_par_iter()
        .map(|draw| {
            let mut rng = seed::rng(config.seed.wrapping_add(draw as u64));
            let mut sample: Vec<usize> = (0..config.sample_size)
                .map(|_| rng.random_range(0..population.len()))
                .collect();
            sample.sort_by(|&a, &b| {
                population[b]
                    .0
                    .partial_cmp(&population[a].0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let relevance: Vec<bool> = sample.iter().map(|&i| population[i].1).collect();
            config.ks.iter().map(|&k| metric.at_k(&relevance, k)).collect()
        })
        .collect();

    let n = draws.len() as f64;
    let mut mean = vec![0.0; config.ks.len()];
    for d in &draws {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let stderr = (0..config.ks.len())
        .map(|j| {
            if draws.len() < 2 {
                return 0.0;
            }
            let var = draws.iter().map(|d| (d[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt()
        })
        .collect();
    let smoothed = moving_average(&mean, config.window);

    Ok(BootstrapCurve {
        ks: config.ks.clone(),
        mean,
        stderr,
        smoothed,
        samples: config.samples,
        sample_size: config.sample_size,
        window: config.window,
    })
}
