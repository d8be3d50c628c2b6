use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::output::OutputSet;
use crate::stages::{build_captioner, build_ranker, build_tagger, caption_all, load_data, rank_split, tag_ids};

pub const WORKLIST_FILE: &str = "worklist.jsonl";
pub const TAGS_FILE: &str = "tags.jsonl";
pub const CAPTIONS_FILE: &str = "captions.jsonl";

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub ranked: usize,
    pub tagged: usize,
    pub captioned: usize,
    pub constrained: usize,
    pub worklist: PathBuf,
    pub tags: PathBuf,
    pub captions: PathBuf,
}

/// Ranks the configured split, then tags and captions the top `k` exams in
/// rank order, writing the three stage outputs into the output directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary> {
    let out_dir = config.out_path()?;
    let corpus = load_data(config)?;
    let ranker = build_ranker(config, &corpus)?;
    let worklist = rank_split(ranker.as_ref(), &corpus, config.split)?;
    let top = worklist.top_k_gated(config.k, config.min_score);
    log::info!(
        "ranked {} exams; {} enter the worklist prefix",
        worklist.len(),
        top.len()
    );

    let (tags, captions) = if top.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let tagger = build_tagger(config, &corpus)?;
        let captioner = build_captioner(config, &corpus)?;
        let tags = tag_ids(tagger.as_ref(), &corpus, &top)?;
        let captions = caption_all(&captioner, &corpus, &tags)?;
        (tags, captions)
    };

    let paths = [WORKLIST_FILE, TAGS_FILE, CAPTIONS_FILE].map(|f| out_dir.join(f));
    let mut outputs = OutputSet::new();
    write_worklist(&mut outputs, &paths[0], &worklist)?;
    outputs.write_jsonl(&paths[1], &tags)?;
    outputs.write_jsonl(&paths[2], &captions)?;
    outputs.commit();

    let [worklist_path, tags_path, captions_path] = paths;
    Ok(PipelineSummary {
        ranked: worklist.len(),
        tagged: tags.len(),
        captioned: captions.len(),
        constrained: captions.iter().filter(|c| c.constrained).count(),
        worklist: worklist_path,
        tags: tags_path,
        captions: captions_path,
    })
}

pub fn write_worklist(outputs: &mut OutputSet, path: &Path, worklist: &triage_core::RankedWorklist) -> Result<()> {
    use std::io::Write;
    let mut w = outputs.create(path)?;
    worklist.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}
