//! Exam records, JSONL ingestion and the synthetic corpus generator.
//!
//! One exam is a set of `m` image embeddings of dimension `d`, a (possibly
//! empty) set of abnormality tags, and the report text. An exam with no tags
//! is normal.

mod synth;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{synth_corpus, SynthConfig, TAG_POOL};

/// Dataset partition an exam belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!("unknown split `{other}`"))),
        }
    }
}

/// Canonical tag set. Ordered so that iteration and serialization are stable.
pub type TagSet = BTreeSet<String>;

/// One radiography exam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exam {
    pub exam_id: String,
    pub images: Vec<Vec<f64>>,
    #[serde(default)]
    pub tags: TagSet,
    pub report: String,
    pub split: Split,
}

impl Exam {
    /// An exam is abnormal iff it carries at least one tag.
    pub fn abnormal(&self) -> bool {
        !self.tags.is_empty()
    }

    pub fn images_per_exam(&self) -> usize {
        self.images.len()
    }

    pub fn image_dim(&self) -> usize {
        self.images.first().map_or(0, Vec::len)
    }

    /// Length of the concatenated embedding (`m·d`).
    pub fn embedding_len(&self) -> usize {
        self.images.iter().map(Vec::len).sum()
    }
}

/// Concatenates the per-image embeddings of `exam` in stored order.
pub fn concat_embedding(exam: &Exam) -> Vec<f64> {
    let mut out = Vec::with_capacity(exam.embedding_len());
    for image in &exam.images {
        out.extend_from_slice(image);
    }
    out
}

/// Lexicographically ordered tag alphabet with a tag → position lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagVocabulary {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagVocabulary {
    pub fn new<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tags.into_iter().map(Into::into).collect();
        let tags: Vec<String> = set.into_iter().collect();
        let index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tags, index }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn position(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.index.contains_key(tag)
    }

    pub fn tag(&self, position: usize) -> &str {
        &self.tags[position]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}

impl Serialize for TagVocabulary {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.tags.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TagVocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let tags = Vec::<String>::deserialize(deserializer)?;
        Ok(TagVocabulary::new(tags))
    }
}

/// A validated, immutable collection of exams.
#[derive(Debug, Clone)]
pub struct Corpus {
    exams: Vec<Exam>,
    tag_alphabet: TagVocabulary,
    image_dim: usize,
    images_per_exam: usize,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Validates `exams` and builds the tag alphabet from the union of their tags.
    ///
    /// When `expected_m` is set every exam must carry exactly that many images;
    /// otherwise the first exam fixes `m`.
    pub fn new(exams: Vec<Exam>, expected_m: Option<usize>) -> Result<Self> {
        let first = exams
            .first()
            .ok_or_else(|| Error::Empty("corpus has no exams".into()))?;
        let images_per_exam = expected_m.unwrap_or(first.images_per_exam());
        let image_dim = first.image_dim();
        if images_per_exam == 0 {
            return Err(Error::InvalidParameter("exams need at least one image".into()));
        }
        if image_dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }

        let mut by_id = HashMap::with_capacity(exams.len());
        let mut tags = HashSet::new();
        for (i, exam) in exams.iter().enumerate() {
            validate_exam(exam, images_per_exam, image_dim)?;
            if by_id.insert(exam.exam_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(exam.exam_id.clone()));
            }
            tags.extend(exam.tags.iter().cloned());
        }

        Ok(Self {
            exams,
            tag_alphabet: TagVocabulary::new(tags),
            image_dim,
            images_per_exam,
            by_id,
        })
    }

    pub fn exams(&self) -> &[Exam] {
        &self.exams
    }

    pub fn len(&self) -> usize {
        self.exams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exams.is_empty()
    }

    pub fn tag_alphabet(&self) -> &TagVocabulary {
        &self.tag_alphabet
    }

    pub fn image_dim(&self) -> usize {
        self.image_dim
    }

    pub fn images_per_exam(&self) -> usize {
        self.images_per_exam
    }

    /// Width of a concatenated exam embedding (`m·d`).
    pub fn embedding_dim(&self) -> usize {
        self.image_dim * self.images_per_exam
    }

    pub fn get(&self, exam_id: &str) -> Option<&Exam> {
        self.by_id.get(exam_id).map(|&i| &self.exams[i])
    }

    pub fn require(&self, exam_id: &str) -> Result<&Exam> {
        self.get(exam_id).ok_or_else(|| Error::UnknownExam(exam_id.to_string()))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Exam> + '_ {
        self.exams.iter().filter(move |e| e.split == split)
    }

    /// Abnormal exams of one split; the tagging and decoding stages train on these.
    pub fn abnormal(&self, split: Split) -> impl Iterator<Item = &Exam> + '_ {
        self.split(split).filter(|e| e.abnormal())
    }
}

fn validate_exam(exam: &Exam, m: usize, d: usize) -> Result<()> {
    if exam.images.len() != m {
        return Err(Error::dim(
            format!("image count of exam `{}`", exam.exam_id),
            m,
            exam.images.len(),
        ));
    }
    for image in &exam.images {
        if image.len() != d {
            return Err(Error::dim(
                format!("image dimension of exam `{}`", exam.exam_id),
                d,
                image.len(),
            ));
        }
        if image.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding of exam `{}`", exam.exam_id)));
        }
    }
    Ok(())
}

/// Parses JSONL exam records. Blank lines are skipped.
pub fn parse_corpus<R: BufRead>(reader: R, expected_m: Option<usize>) -> Result<Corpus> {
    let mut exams = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let exam: Exam = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        exams.push(exam);
    }
    Corpus::new(exams, expected_m)
}

pub fn load_corpus(path: impl AsRef<Path>, expected_m: Option<usize>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), expected_m)
}

pub fn write_exams<W: Write>(mut writer: W, exams: &[Exam]) -> Result<()> {
    for exam in exams {
        serde_json::to_writer(&mut writer, exam)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

/// Writes the corpus as JSONL, creating missing parent directories.
pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_exams(&mut writer, corpus.exams())?;
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, tags: &[&str]) -> String {
        let tags: Vec<String> = tags.iter().map(|t| format!("\"{t}\"")).collect();
        format!(
            r#"{{"exam_id":"{id}","images":[[0.1,0.2,0.3,0.4],[1.0,2.0,3.0,4.5]],"tags":[{}],"report":"r","split":"train"}}"#,
            tags.join(",")
        )
    }

    #[test]
    fn parses_three_records() {
        let text = [record("a", &["x", "y"]), record("b", &[]), record("c", &["z"])].join("\n");
        let corpus = parse_corpus(text.as_bytes(), Some(2)).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.image_dim(), 4);
        assert_eq!(corpus.embedding_dim(), 8);
        assert_eq!(corpus.tag_alphabet().tags(), ["x", "y", "z"]);
        assert!(!corpus.get("b").unwrap().abnormal());
        assert!(corpus.get("a").unwrap().abnormal());
    }

    #[test]
    fn missing_tags_key_is_normal() {
        let line = r#"{"exam_id":"n","images":[[1.0,2.0]],"report":"clear","split":"val"}"#;
        let corpus = parse_corpus(line.as_bytes(), None).unwrap();
        assert!(corpus.exams()[0].tags.is_empty());
        assert!(!corpus.exams()[0].abnormal());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = [record("a", &[]), record("a", &["x"])].join("\n");
        assert!(matches!(
            parse_corpus(text.as_bytes(), None),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = format!("{}\n{{not json", record("a", &[]));
        match parse_corpus(text.as_bytes(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let bad = r#"{"exam_id":"b","images":[[1.0,2.0],[1.0,2.0]],"report":"","split":"train"}"#;
        let text = format!("{}\n{bad}", record("a", &[]));
        assert!(matches!(
            parse_corpus(text.as_bytes(), None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn wrong_image_count_is_rejected() {
        let one = r#"{"exam_id":"b","images":[[1.0,2.0,3.0,4.0]],"report":"","split":"train"}"#;
        assert!(matches!(
            parse_corpus(one.as_bytes(), Some(2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn concat_keeps_image_order() {
        let exam = Exam {
            exam_id: "e".into(),
            images: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            tags: TagSet::new(),
            report: String::new(),
            split: Split::Test,
        };
        assert_eq!(concat_embedding(&exam), vec![1.0, 2.0, 3.0, 4.0]);
        let single = Exam {
            images: vec![vec![5.0, 6.0]],
            ..exam
        };
        assert_eq!(concat_embedding(&single), vec![5.0, 6.0]);
    }

    #[test]
    fn vocabulary_is_lexicographic_bijection() {
        let vocab = TagVocabulary::new(["opacity", "atelectasis", "edema", "atelectasis"]);
        assert_eq!(vocab.tags(), ["atelectasis", "edema", "opacity"]);
        for (i, t) in vocab.tags().iter().enumerate() {
            assert_eq!(vocab.position(t), Some(i));
        }
    }
}
