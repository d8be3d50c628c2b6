//! Generative captioning with a conditioned LSTM decoder.
//!
//! Three conditioning modes share one cell:
//! - `snt`: the exam embedding only initializes the hidden state;
//! - `tags_prefix`: as `snt`, with the predicted tags fed as leading words;
//! - `tags_gates`: the exam embedding and the centroid of the tag word
//!   embeddings enter every gate at every step.

mod lstm;
mod train;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::TagSet;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use lstm::{
    lstm_step, lstm_step_traced, sequence_loss, sequence_loss_and_grad, ConditionedDecoderParams, Conditioning,
    DecoderDims, DecoderState, GateValues, TrainingSequence,
};
pub use train::{
    build_sequence, greedy_decode, train_decoder, train_decoder_on, ConditionedDecoder, DecoderConfig, TrainingPool,
};

pub const START: &str = "<start>";
pub const END: &str = "<end>";
pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";
pub const START_ID: usize = 0;
pub const END_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const PAD_ID: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    Snt,
    TagsPrefix,
    TagsGates,
}

impl DecoderMode {
    pub fn uses_tags(self) -> bool {
        !matches!(self, DecoderMode::Snt)
    }

    /// Whether the exam embedding and tag centroid enter each gate.
    pub fn gate_conditioned(self) -> bool {
        matches!(self, DecoderMode::TagsGates)
    }

    pub fn all() -> [DecoderMode; 3] {
        [DecoderMode::Snt, DecoderMode::TagsPrefix, DecoderMode::TagsGates]
    }
}

impl fmt::Display for DecoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderMode::Snt => "snt",
            DecoderMode::TagsPrefix => "tags_prefix",
            DecoderMode::TagsGates => "tags_gates",
        })
    }
}

impl FromStr for DecoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snt" => Ok(Self::Snt),
            "tags_prefix" => Ok(Self::TagsPrefix),
            "tags_gates" => Ok(Self::TagsGates),
            other => Err(Error::InvalidParameter(format!("unknown decoder mode `{other}`"))),
        }
    }
}

/// Tokenizes on anything that is not a letter or digit, lowercases, and drops
/// pure-digit tokens and tokens of length one.
pub fn preprocess(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() > 1 && !t.chars().all(|c| c.is_ascii_digit()))
        .map(str::to_lowercase)
        .collect()
}

/// Vocabulary token for a tag: lowercase words joined by underscores.
pub fn tag_token(tag: &str) -> String {
    tag.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

/// Word vocabulary with the reserved tokens at indices 0–3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub max_caption_length: usize,
}

impl TextVocab {
    /// Keeps words seen at least `min_freq` times plus every tag token.
    pub fn build<'a, I, T>(texts: I, tags: T, min_freq: usize, max_caption_length: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
        T: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in texts {
            for tok in text {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut words: Vec<String> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq)
            .map(|(w, _)| w.to_string())
            .collect();
        words.extend(tags.into_iter().map(tag_token));
        words.sort();
        words.dedup();
        let reserved = [START, END, UNK, PAD];
        let mut tokens: Vec<String> = reserved.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().filter(|w| !reserved.contains(&w.as_str())));
        Self::from_tokens(tokens, max_caption_length).expect("reserved prefix present")
    }

    pub fn from_tokens(tokens: Vec<String>, max_caption_length: usize) -> Result<Self> {
        let reserved = [START, END, UNK, PAD];
        if tokens.len() < 4 || tokens[..4].iter().zip(reserved).any(|(t, r)| t != r) {
            return Err(Error::Checkpoint(
                "vocabulary must begin with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self {
            tokens,
            index,
            max_caption_length,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Token ids of the tags, in tag-set order.
    pub fn tag_ids(&self, tags: &TagSet) -> Vec<usize> {
        tags.iter().map(|t| self.id(&tag_token(t))).collect()
    }
}

/// Mean of the word embeddings of the tag tokens.
pub fn tag_centroid(embedding: &Matrix, tags: &TagSet, vocab: &TextVocab) -> Result<Vec<f64>> {
    centroid_of_ids(embedding, &vocab.tag_ids(tags))
}

pub(crate) fn centroid_of_ids(embedding: &Matrix, ids: &[usize]) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Err(Error::Empty("tag centroid of an empty tag set".into()));
    }
    let mut out = vec![0.0; embedding.cols()];
    for &id in ids {
        for (o, v) in out.iter_mut().zip(embedding.row(id)) {
            *o += v;
        }
    }
    let n = ids.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn preprocessing_rules() {
        assert_eq!(
            preprocess("The heart is 2 XXXX normal."),
            ["the", "heart", "is", "xxxx", "normal"]
        );
        assert!(preprocess("A B").is_empty());
        assert_eq!(preprocess("T12-vertebra, 2005."), ["t12", "vertebra"]);
    }

    #[test]
    fn tag_tokens_join_words() {
        assert_eq!(tag_token("Pleural Effusion"), "pleural_effusion");
        assert_eq!(tag_token("edema"), "edema");
    }

    #[test]
    fn vocab_reserves_first_indices_and_applies_cutoff() {
        let a = preprocess("the lungs are clear the heart");
        let b = preprocess("the lungs are fine");
        let v = TextVocab::build([a.as_slice(), b.as_slice()], ["pleural effusion"], 2, 60);
        assert_eq!(&v.tokens()[..4], [START, END, UNK, PAD]);
        assert_eq!(v.id("the"), v.tokens().iter().position(|t| t == "the").unwrap());
        assert_eq!(v.id("heart"), UNK_ID);
        assert_ne!(v.id("pleural_effusion"), UNK_ID);
        assert!(TextVocab::from_tokens(vec!["x".into()], 5).is_err());
    }

    #[test]
    fn centroid_examples() {
        let emb = Matrix::from_rows(vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, -2.0],
            vec![-1.0, 2.0],
        ])
        .unwrap();
        let vocab = TextVocab::from_tokens(
            [START, END, UNK, PAD, "aa", "bb"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            10,
        )
        .unwrap();
        let one: TagSet = ["aa".to_string()].into();
        assert_eq!(tag_centroid(&emb, &one, &vocab).unwrap(), vec![1.0, -2.0]);
        let both: TagSet = ["aa".to_string(), "bb".to_string()].into();
        assert_eq!(tag_centroid(&emb, &both, &vocab).unwrap(), vec![0.0, 0.0]);
        assert!(tag_centroid(&emb, &TagSet::new(), &vocab).is_err());
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(s in "[a-zA-Z0-9 .,;:-]{0,60}") {
            let once = preprocess(&s);
            prop_assert_eq!(preprocess(&once.join(" ")), once);
        }

        #[test]
        fn centroid_ignores_order(ids in prop::collection::vec(4usize..9, 1..6), seed in 0u64..100) {
            let emb = Matrix::from_vec(9, 3, (0..27).map(|i| ((i as u64 * 7919 + seed) % 101) as f64 / 10.0).collect()).unwrap();
            let mut rev = ids.clone();
            rev.reverse();
            let a = centroid_of_ids(&emb, &ids).unwrap();
            let b = centroid_of_ids(&emb, &rev).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
