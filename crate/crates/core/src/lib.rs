//! Abnormality-first captioning of radiograph exams.
//!
//! The pipeline ranks exams by how likely they are to be abnormal, tags the
//! exams at the top of the worklist, and then writes a caption for each one,
//! either by retrieving the report of the most similar training exam with the
//! same tags or by decoding one with a conditioned LSTM.
//!
//! Everything is deterministic given a seed: per-exam randomness is drawn
//! from streams keyed by the exam id, and parallel loops preserve order.

pub mod corpus;
pub mod decode;
mod error;
pub mod labeler;
pub mod metrics;
pub mod numerics;
pub mod persist;
pub mod rank;
pub mod retrieve;
pub mod seed;
pub mod tag;

pub use corpus::{load_corpus, parse_corpus, synth_corpus, Corpus, Exam, Split, SynthConfig, TagSet, TagVocabulary};
pub use decode::{greedy_decode, train_decoder, ConditionedDecoder, DecoderConfig, DecoderMode, TrainingPool};
pub use error::{Error, Result};
pub use labeler::{extract_labels, LabelLexicon};
pub use numerics::{FitReport, TrainConfig};
pub use persist::Checkpoint;
pub use rank::{rank_exams, train_binary_head, BinaryHead, RankedWorklist, Scorer, WorklistEntry};
pub use retrieve::{build_index, EmbeddingIndex, RetrievalResult};
pub use tag::{predict_tags, train_tag_head, BaselineMethod, TagAssignment, TagHead, Tagger, ThresholdMode};
