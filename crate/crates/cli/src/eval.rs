use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use triage_core::corpus::{Corpus, TagSet};
use triage_core::decode::preprocess;
use triage_core::labeler::LabelLexicon;
use triage_core::metrics::{
    bleu, bootstrap_curve, clinical_pr, macro_f1, rouge_l_corpus, BleuConfig, BootstrapConfig, BootstrapSummary,
    MetricReport, RankMetric,
};
use triage_core::tag::TagAssignment;

use crate::stages::{read_jsonl, read_worklist, CaptionRecord};

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub worklist: PathBuf,
    pub tags: Option<PathBuf>,
    pub captions: Option<PathBuf>,
    /// Cutoff for the headline ranking values.
    pub k: usize,
    /// Number of top-ranked abnormal exams scored for tagging F1.
    pub f1_k: usize,
    pub bootstrap: BootstrapConfig,
    pub bleu: BleuConfig,
    pub rouge_beta: f64,
    pub lexicon: Option<PathBuf>,
}

impl EvalOptions {
    pub fn new(worklist: PathBuf, seed: u64) -> Self {
        Self {
            worklist,
            tags: None,
            captions: None,
            k: 100,
            f1_k: 100,
            bootstrap: BootstrapConfig {
                seed,
                ..BootstrapConfig::default()
            },
            bleu: BleuConfig::default(),
            rouge_beta: 1.0,
            lexicon: None,
        }
    }
}

fn ranking_reports(corpus: &Corpus, opts: &EvalOptions) -> Result<Vec<MetricReport>> {
    let worklist = read_worklist(&opts.worklist)?;
    let mut population = Vec::with_capacity(worklist.len());
    for entry in &worklist.entries {
        population.push((entry.score, corpus.require(&entry.exam_id)?.abnormal()));
    }
    let relevance: Vec<bool> = population.iter().map(|p| p.1).collect();
    let mut out = Vec::new();
    for metric in [RankMetric::Ndcg, RankMetric::Precision] {
        let curve = bootstrap_curve(&population, metric, &opts.bootstrap)?;
        let per_k = curve.ks.iter().map(|&k| (k, metric.at_k(&relevance, k))).collect();
        out.push(MetricReport {
            metric: format!("{}@{}", metric.name(), opts.k),
            value: metric.at_k(&relevance, opts.k),
            per_k: Some(per_k),
            bootstrap: Some(BootstrapSummary::from(&curve)),
        });
    }
    Ok(out)
}

fn tagging_report(corpus: &Corpus, path: &Path, opts: &EvalOptions) -> Result<MetricReport> {
    let assignments: Vec<TagAssignment> = read_jsonl(path)?;
    let worklist = read_worklist(&opts.worklist)?;
    let by_id: std::collections::HashMap<&str, &TagAssignment> =
        assignments.iter().map(|a| (a.exam_id.as_str(), a)).collect();
    let (mut gold, mut predicted) = (Vec::<TagSet>::new(), Vec::<TagSet>::new());
    for id in worklist.ids() {
        if gold.len() == opts.f1_k {
            break;
        }
        let exam = corpus.require(id)?;
        if let (true, Some(a)) = (exam.abnormal(), by_id.get(id)) {
            gold.push(exam.tags.clone());
            predicted.push(a.tags.clone());
        }
    }
    if gold.is_empty() {
        bail!("no tagged abnormal exams to score");
    }
    if gold.len() < opts.f1_k {
        log::warn!(
            "only {} tagged abnormal exams available for F1 (wanted {}); using all of them",
            gold.len(),
            opts.f1_k
        );
    }
    let mut r = MetricReport::scalar(format!("macro_f1@{}", opts.f1_k), macro_f1(&gold, &predicted)?);
    r.per_k = Some([(gold.len(), r.value)].into());
    Ok(r)
}

fn caption_reports(corpus: &Corpus, path: &Path, opts: &EvalOptions) -> Result<Vec<MetricReport>> {
    let records: Vec<CaptionRecord> = read_jsonl(path)?;
    if records.is_empty() {
        bail!("{} holds no captions", path.display());
    }
    let mut gold_texts = Vec::with_capacity(records.len());
    for r in &records {
        gold_texts.push(corpus.require(&r.exam_id)?.report.clone());
    }
    let system_texts: Vec<String> = records.iter().map(|r| r.caption.clone()).collect();
    let gold_tokens: Vec<Vec<String>> = gold_texts.iter().map(|t| preprocess(t)).collect();
    let sys_tokens: Vec<Vec<String>> = system_texts.iter().map(|t| preprocess(t)).collect();
    let lexicon = match &opts.lexicon {
        Some(p) => LabelLexicon::from_file(p).with_context(|| format!("loading lexicon {}", p.display()))?,
        None => LabelLexicon::default(),
    };
    let (cp, cr) = clinical_pr(&gold_texts, &system_texts, &lexicon)?;
    Ok(vec![
        MetricReport::scalar("bleu", bleu(&sys_tokens, &gold_tokens, opts.bleu)?),
        MetricReport::scalar("rouge_l", rouge_l_corpus(&sys_tokens, &gold_tokens, opts.rouge_beta)?),
        MetricReport::scalar("clinical_precision", cp),
        MetricReport::scalar("clinical_recall", cr),
    ])
}

/// Scores whichever stage outputs are given against the corpus gold data.
pub fn evaluate(corpus: &Corpus, opts: &EvalOptions) -> Result<Vec<MetricReport>> {
    let mut reports = ranking_reports(corpus, opts)?;
    if let Some(tags) = &opts.tags {
        reports.push(tagging_report(corpus, tags, opts)?);
    }
    if let Some(captions) = &opts.captions {
        reports.extend(caption_reports(corpus, captions, opts)?);
    }
    Ok(reports)
}
