use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use triage_core::corpus::Split;
use triage_core::decode::DecoderMode;
use triage_core::tag::{BaselineMethod, ThresholdMode};
use triage_core::{DecoderConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum RankerChoice {
    BinaryHead,
    Random,
    #[serde(rename = "1nn")]
    #[value(name = "1nn")]
    Nn1,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum TaggerChoice {
    TagHead,
    Random,
    #[serde(rename = "1nn")]
    #[value(name = "1nn")]
    Nn1,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Captioner {
    #[serde(rename = "retrieve_1nn_plus")]
    #[value(name = "retrieve_1nn_plus")]
    Retrieve1nnPlus,
    #[serde(rename = "retrieve_1nn")]
    #[value(name = "retrieve_1nn")]
    Retrieve1nn,
    DecodeSnt,
    DecodeTagsPrefix,
    DecodeTagsGates,
}

impl Captioner {
    pub fn decoder_mode(self) -> Option<DecoderMode> {
        match self {
            Captioner::DecodeSnt => Some(DecoderMode::Snt),
            Captioner::DecodeTagsPrefix => Some(DecoderMode::TagsPrefix),
            Captioner::DecodeTagsGates => Some(DecoderMode::TagsGates),
            Captioner::Retrieve1nnPlus | Captioner::Retrieve1nn => None,
        }
    }
}

fn baseline(name: &str) -> Option<BaselineMethod> {
    name.parse().ok()
}

impl RankerChoice {
    pub fn baseline(self) -> Option<BaselineMethod> {
        (self != RankerChoice::BinaryHead)
            .then(|| baseline(&self.to_string()))
            .flatten()
    }
}

impl TaggerChoice {
    pub fn baseline(self) -> Option<BaselineMethod> {
        (self != TaggerChoice::TagHead)
            .then(|| baseline(&self.to_string()))
            .flatten()
    }
}

macro_rules! display_via_value_enum {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let v = self.to_possible_value().expect("no skipped variants");
                f.write_str(v.get_name())
            }
        }
    )*};
}
display_via_value_enum!(RankerChoice, TaggerChoice, Captioner);

/// Everything a pipeline run depends on. Loaded from `--config` and then
/// overridden by explicit command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: Option<PathBuf>,
    /// Worklist cutoff: how many top-ranked exams are tagged and captioned.
    pub k: usize,
    /// Optional score gate applied on top of the cutoff.
    pub min_score: Option<f64>,
    /// Split whose exams are ranked.
    pub split: Split,
    pub ranker: RankerChoice,
    pub tagger: TaggerChoice,
    pub captioner: Captioner,
    pub k_neighbors: usize,
    pub threshold_mode: ThresholdMode,
    pub seed: u64,
    pub ranker_model: Option<PathBuf>,
    pub tagger_model: Option<PathBuf>,
    pub decoder_model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    pub decoder: DecoderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: None,
            k: 100,
            min_score: None,
            split: Split::Test,
            ranker: RankerChoice::BinaryHead,
            tagger: TaggerChoice::TagHead,
            captioner: Captioner::Retrieve1nnPlus,
            k_neighbors: 5,
            threshold_mode: ThresholdMode::PerTag,
            seed: 0,
            ranker_model: None,
            tagger_model: None,
            decoder_model: None,
            out: None,
            train: TrainConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| crate::UsageError::new("no corpus given; pass --data or set `data` in the config").into())
    }

    pub fn out_path(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| crate::UsageError::new("no output location given; pass --out").into())
    }
}
