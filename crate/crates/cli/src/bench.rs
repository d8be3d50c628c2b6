use std::time::Instant;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use triage_core::corpus::{synth_corpus, Corpus, Exam, Split, SynthConfig};
use triage_core::rank::rank_exams;
use triage_core::retrieve::build_index;

use crate::config::{Captioner, PipelineConfig, RankerChoice, TaggerChoice};
use crate::stages::{build_ranker, build_tagger, caption_all, tag_ids, CaptionModel};

/// Published end-to-end timings, which also include CNN image encoding.
pub const REFERENCE_RANK_SECONDS: f64 = 19.78;
pub const REFERENCE_CAPTION_SECONDS: f64 = 19.43;
pub const NOTE: &str = "Timings cover scoring precomputed embeddings and retrieval only; the reference \
figures also include CNN encoding of the images on different hardware, so they are context, not a comparison.";

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub n_rank: usize,
    pub n_caption: usize,
    pub index_size: usize,
    /// Per-image embedding width for the synthetic corpus.
    pub d: usize,
    pub m: usize,
    pub repeats: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            n_rank: 500,
            n_caption: 100,
            index_size: 2000,
            d: 1024,
            m: 2,
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_rank: usize,
    pub n_caption: usize,
    pub index_size: usize,
    pub embedding_dim: usize,
    /// Scoring and sorting `n_rank` exams (best of the repeats).
    pub rank_seconds: f64,
    /// The same for `n_rank / 2` exams, to show how the cost scales.
    pub rank_half_seconds: f64,
    /// Tagging and 1NN+ captioning of the top `n_caption` exams.
    pub caption_seconds: f64,
    pub reference_rank_seconds: f64,
    pub reference_caption_seconds: f64,
    pub note: String,
}

/// A corpus with `index_size` training exams and at least `n_rank` others.
pub fn bench_corpus(opts: &BenchOptions, seed: u64) -> Result<Corpus> {
    let val = 100;
    let n = opts.index_size + opts.n_rank + val;
    let config = SynthConfig {
        seed,
        n,
        d: opts.d,
        m: opts.m,
        val_fraction: val as f64 / n as f64,
        test_fraction: (opts.n_rank as f64 + 0.5) / n as f64,
        ..SynthConfig::default()
    };
    Ok(synth_corpus(&config)?)
}

fn best_of<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let out = f()?;
        best = best.min(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    Ok((best, last.expect("at least one run")))
}

pub fn run_bench(corpus: &Corpus, config: &PipelineConfig, opts: &BenchOptions) -> Result<BenchReport> {
    let pool: Vec<&Exam> = corpus.split(Split::Test).chain(corpus.split(Split::Val)).collect();
    if pool.len() < opts.n_rank {
        bail!(
            "bench needs {} exams to rank but the corpus has {}",
            opts.n_rank,
            pool.len()
        );
    }
    let train: Vec<&Exam> = corpus.split(Split::Train).collect();
    if train.len() < opts.index_size {
        bail!(
            "bench needs {} training exams for the index but the corpus has {}",
            opts.index_size,
            train.len()
        );
    }
    let config = PipelineConfig {
        ranker: RankerChoice::BinaryHead,
        tagger: TaggerChoice::TagHead,
        captioner: Captioner::Retrieve1nnPlus,
        ..config.clone()
    };
    let ranker = build_ranker(&config, corpus)?;
    let tagger = build_tagger(&config, corpus)?;
    let captioner = CaptionModel::Retrieval {
        index: build_index(train[..opts.index_size].iter().copied())?,
        constrained: true,
    };

    let to_rank = &pool[..opts.n_rank];
    let (rank_seconds, worklist) = best_of(opts.repeats, || Ok(rank_exams(ranker.as_ref(), to_rank)?))?;
    let (rank_half_seconds, _) = best_of(opts.repeats, || {
        Ok(rank_exams(ranker.as_ref(), &to_rank[..opts.n_rank / 2])?)
    })?;
    let top = worklist.top_k(opts.n_caption);
    let (caption_seconds, captions) = best_of(opts.repeats, || {
        let tags = tag_ids(tagger.as_ref(), corpus, &top)?;
        caption_all(&captioner, corpus, &tags)
    })?;
    debug_assert_eq!(captions.len(), top.len());

    Ok(BenchReport {
        n_rank: opts.n_rank,
        n_caption: top.len(),
        index_size: opts.index_size,
        embedding_dim: corpus.embedding_dim(),
        rank_seconds,
        rank_half_seconds,
        caption_seconds,
        reference_rank_seconds: REFERENCE_RANK_SECONDS,
        reference_caption_seconds: REFERENCE_CAPTION_SECONDS,
        note: NOTE.to_string(),
    })
}
