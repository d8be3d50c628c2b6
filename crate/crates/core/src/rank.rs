//! Abnormality scoring and worklist construction.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{concat_embedding, Corpus, Exam, Split, TagSet, TagVocabulary};
use crate::error::{Error, Result};
use crate::numerics::{fit_bce, sigmoid, FitReport, Mlp, TrainConfig};
use crate::seed;
use crate::tag::{BaselineMethod, BaselineTagger};

/// Assigns each exam an abnormality score in `[0, 1]`.
pub trait Scorer: Sync {
    fn name(&self) -> String;
    fn score(&self, exam: &Exam) -> Result<f64>;
}

/// Feed-forward head mapping the concatenated embedding to one logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryHead {
    pub net: Mlp,
}

impl BinaryHead {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.net.out_dim() != 1 {
            return Err(Error::dim("binary head outputs", 1, self.net.out_dim()));
        }
        Ok(())
    }
}

pub fn score_exam(head: &BinaryHead, exam: &Exam) -> Result<f64> {
    let x = concat_embedding(exam);
    if x.len() != head.net.in_dim() {
        return Err(Error::dim(
            format!("binary head input for `{}`", exam.exam_id),
            head.net.in_dim(),
            x.len(),
        ));
    }
    Ok(sigmoid(head.net.forward(&x)?[0]))
}

impl Scorer for BinaryHead {
    fn name(&self) -> String {
        "binary_head".into()
    }

    fn score(&self, exam: &Exam) -> Result<f64> {
        score_exam(self, exam)
    }
}

/// Trains the binary head on the train split (normal and abnormal exams),
/// keeping the epoch with the lowest validation loss.
pub fn train_binary_head(corpus: &Corpus, config: &TrainConfig, seed: u64) -> Result<(BinaryHead, FitReport)> {
    let train: Vec<&Exam> = corpus.split(Split::Train).collect();
    let positives = train.iter().filter(|e| e.abnormal()).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::SingleClass(format!(
            "{positives} abnormal of {} train exams",
            train.len()
        )));
    }
    let val: Vec<&Exam> = corpus.split(Split::Val).collect();
    let target = |e: &&Exam| vec![f64::from(u8::from(e.abnormal()))];
    let xs: Vec<Vec<f64>> = train.iter().map(|e| concat_embedding(e)).collect();
    let ys: Vec<Vec<f64>> = train.iter().map(target).collect();
    let vx: Vec<Vec<f64>> = val.iter().map(|e| concat_embedding(e)).collect();
    let vy: Vec<Vec<f64>> = val.iter().map(target).collect();

    let mut rng = seed::rng(seed);
    let init = Mlp::glorot(&mut rng, corpus.embedding_dim(), &config.hidden, 1);
    let (net, report) = fit_bce(init, &xs, &ys, &vx, &vy, config, &mut rng)?;
    Ok((BinaryHead { net }, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorklistEntry {
    pub exam_id: String,
    pub score: f64,
}

/// Exams sorted by descending score, ties by ascending exam_id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedWorklist {
    pub method: String,
    pub entries: Vec<WorklistEntry>,
}

#[derive(Serialize, Deserialize)]
struct WorklistLine {
    exam_id: String,
    score: f64,
    rank: usize,
}

fn by_rank(a: &WorklistEntry, b: &WorklistEntry) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.exam_id.cmp(&b.exam_id))
}

impl RankedWorklist {
    pub fn from_scores(method: impl Into<String>, mut entries: Vec<WorklistEntry>) -> Self {
        entries.sort_by(by_rank);
        Self {
            method: method.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.exam_id.as_str())
    }

    /// The first `min(k, n)` exam ids.
    pub fn top_k(&self, k: usize) -> Vec<String> {
        self.ids().take(k).map(str::to_string).collect()
    }

    /// Like [`top_k`](Self::top_k), but stops at the first score below `min_score`.
    pub fn top_k_gated(&self, k: usize, min_score: Option<f64>) -> Vec<String> {
        self.entries
            .iter()
            .take(k)
            .take_while(|e| min_score.is_none_or(|m| e.score >= m))
            .map(|e| e.exam_id.clone())
            .collect()
    }

    /// One `{"exam_id", "score", "rank"}` object per line, rank starting at 1.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            let line = WorklistLine {
                exam_id: e.exam_id.clone(),
                score: e.score,
                rank: i + 1,
            };
            serde_json::to_writer(&mut writer, &line)?;
            writer.write_all(b"\n").map_err(|e| Error::io("<worklist>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R, method: impl Into<String>) -> Result<Self> {
        let mut lines: Vec<WorklistLine> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            lines.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        lines.sort_by_key(|l| l.rank);
        Ok(Self {
            method: method.into(),
            entries: lines
                .into_iter()
                .map(|l| WorklistEntry {
                    exam_id: l.exam_id,
                    score: l.score,
                })
                .collect(),
        })
    }
}

/// Scores every exam (in parallel) and sorts descending.
pub fn rank_exams(scorer: &dyn Scorer, exams: &[&Exam]) -> Result<RankedWorklist> {
    let entries = exams
        .par_iter()
        .map(|e| {
            scorer.score(e).map(|score| WorklistEntry {
                exam_id: e.exam_id.clone(),
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedWorklist::from_scores(scorer.name(), entries))
}

/// Fraction of the gold alphabet covered by the predicted tags:
/// `|T ∩ G| / |G|`.
pub fn tag_overlap_score(predicted: &TagSet, gold: &TagVocabulary) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Empty("gold tag alphabet".into()));
    }
    let relevant = predicted.iter().filter(|t| gold.contains(t)).count();
    Ok(relevant as f64 / gold.len() as f64)
}

/// Ranking baselines: a seeded uniform score, or the coverage score of the
/// tags produced by the 1NN / kNN taggers.
#[derive(Debug, Clone)]
pub struct BaselineRanker {
    tagger: BaselineTagger,
    gold: TagVocabulary,
    seed: u64,
}

impl BaselineRanker {
    pub fn new<'a, I>(
        method: BaselineMethod,
        train: I,
        gold: TagVocabulary,
        k_neighbors: usize,
        seed: u64,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Exam>,
    {
        if gold.is_empty() && method != BaselineMethod::Random {
            return Err(Error::Empty("gold tag alphabet".into()));
        }
        Ok(Self {
            tagger: BaselineTagger::new(method, train, k_neighbors, seed)?,
            gold,
            seed,
        })
    }
}

impl Scorer for BaselineRanker {
    fn name(&self) -> String {
        self.tagger.method().to_string()
    }

    fn score(&self, exam: &Exam) -> Result<f64> {
        match self.tagger.method() {
            BaselineMethod::Random => Ok(seed::keyed_rng(self.seed, &exam.exam_id).random::<f64>()),
            _ => tag_overlap_score(&self.tagger.tags_for(exam)?, &self.gold),
        }
    }
}

/// Ranks `exams` with a baseline trained on `train` (normal and abnormal).
pub fn baseline_rank(
    method: BaselineMethod,
    train: &[&Exam],
    exams: &[&Exam],
    gold: &TagVocabulary,
    k_neighbors: usize,
    seed: u64,
) -> Result<RankedWorklist> {
    let ranker = BaselineRanker::new(method, train.iter().copied(), gold.clone(), k_neighbors, seed)?;
    rank_exams(&ranker, exams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseParams;

    struct Fixed(Vec<(&'static str, f64)>);

    impl Scorer for Fixed {
        fn name(&self) -> String {
            "fixed".into()
        }
        fn score(&self, exam: &Exam) -> Result<f64> {
            Ok(self.0.iter().find(|(id, _)| *id == exam.exam_id).unwrap().1)
        }
    }

    fn exam(id: &str, emb: &[f64], tags: &[&str]) -> Exam {
        Exam {
            exam_id: id.into(),
            images: vec![emb.to_vec()],
            tags: tags.iter().map(|s| s.to_string()).collect(),
            report: String::new(),
            split: Split::Test,
        }
    }

    #[test]
    fn ties_break_by_id() {
        let exams = [exam("a", &[1.0], &[]), exam("b", &[1.0], &[]), exam("c", &[1.0], &[])];
        let refs: Vec<&Exam> = exams.iter().collect();
        let w = rank_exams(&Fixed(vec![("a", 0.9), ("b", 0.1), ("c", 0.9)]), &refs).unwrap();
        assert_eq!(w.top_k(10), ["a", "c", "b"]);
        assert!(rank_exams(&Fixed(vec![]), &[]).unwrap().is_empty());
    }

    #[test]
    fn top_k_bounds() {
        let w = RankedWorklist::from_scores(
            "m",
            vec![
                WorklistEntry {
                    exam_id: "x".into(),
                    score: 0.2,
                },
                WorklistEntry {
                    exam_id: "y".into(),
                    score: 0.7,
                },
            ],
        );
        assert!(w.top_k(0).is_empty());
        assert_eq!(w.top_k(5), ["y", "x"]);
        assert_eq!(w.top_k_gated(5, Some(0.5)), ["y"]);
    }

    #[test]
    fn zero_head_scores_half_and_bias_is_monotone() {
        let mut head = BinaryHead {
            net: Mlp {
                layers: vec![DenseParams::zeros(1, 2)],
            },
        };
        let e = exam("e", &[3.0, -1.0], &[]);
        assert_eq!(score_exam(&head, &e).unwrap(), 0.5);
        head.net.layers[0].bias[0] += 1.0;
        assert!(score_exam(&head, &e).unwrap() > 0.5);
        assert!(score_exam(&head, &exam("e", &[1.0], &[])).is_err());
    }

    #[test]
    fn overlap_score_examples() {
        let gold50 = TagVocabulary::new((0..50).map(|i| format!("t{i}")));
        let two: TagSet = ["t1".to_string(), "t2".to_string()].into();
        assert!((tag_overlap_score(&two, &gold50).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(tag_overlap_score(&TagSet::new(), &gold50).unwrap(), 0.0);
        let gold10 = TagVocabulary::new((0..10).map(|i| format!("t{i}")));
        let mixed: TagSet = ["t1", "t2", "unknown"].iter().map(|s| s.to_string()).collect();
        assert!((tag_overlap_score(&mixed, &gold10).unwrap() - 0.2).abs() < 1e-15);
        assert!(tag_overlap_score(&two, &TagVocabulary::default()).is_err());
    }

    #[test]
    fn nn1_with_normal_neighbor_scores_zero() {
        let train = [exam("n", &[1.0, 0.0], &[]), exam("a", &[0.0, 1.0], &["x"])];
        let train_refs: Vec<&Exam> = train.iter().collect();
        let q = exam("q", &[1.0, 0.1], &[]);
        let gold = TagVocabulary::new(["x"]);
        let w = baseline_rank(BaselineMethod::Nn1, &train_refs, &[&q], &gold, 1, 0).unwrap();
        assert_eq!(w.entries[0].score, 0.0);
    }

    #[test]
    fn random_ranking_is_reproducible() {
        let train = [exam("a", &[0.0, 1.0], &["x"])];
        let train_refs: Vec<&Exam> = train.iter().collect();
        let qs: Vec<Exam> = (0..20).map(|i| exam(&format!("q{i}"), &[1.0, i as f64], &[])).collect();
        let refs: Vec<&Exam> = qs.iter().collect();
        let gold = TagVocabulary::new(["x"]);
        let a = baseline_rank(BaselineMethod::Random, &train_refs, &refs, &gold, 1, 3).unwrap();
        let b = baseline_rank(BaselineMethod::Random, &train_refs, &refs, &gold, 1, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.entries.iter().all(|e| (0.0..=1.0).contains(&e.score)));
    }

    #[test]
    fn jsonl_round_trip() {
        let w = RankedWorklist::from_scores(
            "m",
            vec![
                WorklistEntry {
                    exam_id: "x".into(),
                    score: 0.25,
                },
                WorklistEntry {
                    exam_id: "y".into(),
                    score: 0.75,
                },
            ],
        );
        let mut buf = Vec::new();
        w.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"exam_id":"y","score":0.75,"rank":1}"#);
        assert_eq!(RankedWorklist::read_jsonl(&buf[..], "m").unwrap(), w);
    }
}
