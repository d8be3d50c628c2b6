use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use triage_core::corpus::{load_corpus, Corpus, Exam, Split};
use triage_core::decode::{greedy_decode, train_decoder, ConditionedDecoder, TrainingPool};
use triage_core::rank::{rank_exams, train_binary_head, BaselineRanker, BinaryHead, RankedWorklist, Scorer};
use triage_core::retrieve::{build_index, query_vector, EmbeddingIndex};
use triage_core::tag::{tag_worklist, train_tag_head, BaselineTagger, TagAssignment, TagHead, Tagger};
use triage_core::Checkpoint;

use crate::config::{Captioner, PipelineConfig};

/// One line of the caption output. Decoded captions have no source exam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub exam_id: String,
    pub caption: String,
    pub source_exam: Option<String>,
    pub similarity: Option<f64>,
    pub constrained: bool,
}

pub fn load_data(config: &PipelineConfig) -> Result<Corpus> {
    let path = config.data_path()?;
    let corpus = load_corpus(path, None).with_context(|| format!("loading corpus {}", path.display()))?;
    log::info!("loaded {} exams from {}", corpus.len(), path.display());
    Ok(corpus)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} checkpoint {} does not exist", path.display());
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn read_worklist(path: &Path) -> Result<RankedWorklist> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    RankedWorklist::read_jsonl(BufReader::new(file), "file").with_context(|| format!("reading {}", path.display()))
}

pub fn build_ranker(config: &PipelineConfig, corpus: &Corpus) -> Result<Box<dyn Scorer>> {
    if let Some(method) = config.ranker.baseline() {
        let ranker = BaselineRanker::new(
            method,
            corpus.split(Split::Train),
            corpus.tag_alphabet().clone(),
            config.k_neighbors,
            config.seed,
        )?;
        return Ok(Box::new(ranker));
    }
    match &config.ranker_model {
        Some(path) => {
            require_file(path, "ranker")?;
            Ok(Box::new(BinaryHead::load(path)?))
        }
        None => {
            log::info!("no ranker checkpoint given; training the binary head");
            let (head, report) = train_binary_head(corpus, &config.train, config.seed)?;
            log::info!(
                "ranker: train loss {:.4}, val loss {:.4}",
                report.train_loss,
                report.val_loss
            );
            Ok(Box::new(head))
        }
    }
}

pub fn build_tagger(config: &PipelineConfig, corpus: &Corpus) -> Result<Box<dyn Tagger>> {
    if let Some(method) = config.tagger.baseline() {
        let tagger = BaselineTagger::new(method, corpus.abnormal(Split::Train), config.k_neighbors, config.seed)?;
        return Ok(Box::new(tagger));
    }
    match &config.tagger_model {
        Some(path) => {
            require_file(path, "tagger")?;
            Ok(Box::new(TagHead::load(path)?))
        }
        None => {
            log::info!("no tagger checkpoint given; training the tag head");
            let (head, report) = train_tag_head(corpus, &config.train, config.threshold_mode, config.seed)?;
            log::info!(
                "tagger: train loss {:.4}, val loss {:.4}",
                report.train_loss,
                report.val_loss
            );
            Ok(Box::new(head))
        }
    }
}

pub enum CaptionModel {
    Retrieval { index: EmbeddingIndex, constrained: bool },
    Decoder(Box<ConditionedDecoder>),
}

pub fn build_captioner(config: &PipelineConfig, corpus: &Corpus) -> Result<CaptionModel> {
    let Some(mode) = config.captioner.decoder_mode() else {
        let index = build_index(corpus.abnormal(Split::Train))?;
        return Ok(CaptionModel::Retrieval {
            index,
            constrained: config.captioner == Captioner::Retrieve1nnPlus,
        });
    };
    let decoder = match &config.decoder_model {
        Some(path) => {
            require_file(path, "decoder")?;
            ConditionedDecoder::load(path)?
        }
        None => {
            log::info!("no decoder checkpoint given; training a {mode} decoder");
            let (decoder, report) =
                train_decoder(corpus, mode, TrainingPool::AbnormalOnly, &config.decoder, config.seed)?;
            log::info!(
                "decoder: train loss {:.4}, val loss {:.4}",
                report.train_loss,
                report.val_loss
            );
            decoder
        }
    };
    if decoder.params.mode != mode {
        bail!(
            "decoder checkpoint was trained in {} mode but captioner {} needs {mode}",
            decoder.params.mode,
            config.captioner
        );
    }
    Ok(CaptionModel::Decoder(Box::new(decoder)))
}

/// Captions each tagged exam from its predicted tags, preserving order.
pub fn caption_all(model: &CaptionModel, corpus: &Corpus, assignments: &[TagAssignment]) -> Result<Vec<CaptionRecord>> {
    let exams = assignments
        .iter()
        .map(|a| corpus.require(&a.exam_id))
        .collect::<triage_core::Result<Vec<&Exam>>>()?;
    match model {
        CaptionModel::Retrieval { index, constrained } => {
            let queries = exams
                .iter()
                .map(|e| query_vector(e))
                .collect::<triage_core::Result<Vec<_>>>()?;
            let sims = index.batch_similarities(&queries)?;
            Ok(assignments
                .iter()
                .zip(&sims)
                .map(|(a, s)| {
                    let r = if *constrained {
                        index.retrieve_1nn_plus_from(s, &a.tags)
                    } else {
                        index.retrieve_1nn_from(s)
                    };
                    CaptionRecord {
                        exam_id: a.exam_id.clone(),
                        caption: r.report,
                        source_exam: Some(r.exam_id),
                        similarity: Some(r.similarity),
                        constrained: r.constrained,
                    }
                })
                .collect())
        }
        CaptionModel::Decoder(decoder) => exams
            .par_iter()
            .zip(assignments)
            .map(|(exam, a)| {
                let tokens = greedy_decode(decoder, exam, &a.tags)?;
                Ok(CaptionRecord {
                    exam_id: a.exam_id.clone(),
                    caption: tokens.join(" "),
                    source_exam: None,
                    similarity: None,
                    constrained: false,
                })
            })
            .collect(),
    }
}

pub fn rank_split(scorer: &dyn Scorer, corpus: &Corpus, split: Split) -> Result<RankedWorklist> {
    let exams: Vec<&Exam> = corpus.split(split).collect();
    if exams.is_empty() {
        bail!("the {split} split is empty");
    }
    Ok(rank_exams(scorer, &exams)?)
}

pub fn tag_ids(tagger: &dyn Tagger, corpus: &Corpus, ids: &[String]) -> Result<Vec<TagAssignment>> {
    Ok(tag_worklist(tagger, corpus, ids)?)
}
