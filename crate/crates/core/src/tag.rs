//! Abnormality tagging: a multi-label sigmoid head with learned thresholds,
//! and the Random / 1NN / kNN baselines.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::{concat_embedding, Corpus, Exam, Split, TagSet, TagVocabulary};
use crate::error::{Error, Result};
use crate::numerics::{fit_bce, sigmoid, FitReport, Mlp, TrainConfig};
use crate::retrieve::{build_index, query_vector, EmbeddingIndex};
use crate::seed;

/// Predicted tags for one exam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagAssignment {
    pub exam_id: String,
    pub tags: TagSet,
    /// Per-tag probabilities; empty for the baselines.
    #[serde(rename = "probs", default)]
    pub probabilities: BTreeMap<String, f64>,
}

/// Anything that can tag an exam.
pub trait Tagger: Sync {
    fn name(&self) -> String;
    fn assign(&self, exam: &Exam) -> Result<TagAssignment>;
}

/// One threshold per tag, or a single threshold shared by all tags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    PerTag,
    Global,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Candidate thresholds 0.01, 0.02, …, 0.99.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (1..=99).map(|i| f64::from(i) / 100.0)
}

/// Multi-label sigmoid head over the concatenated exam embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagHead {
    pub net: Mlp,
    pub vocab: TagVocabulary,
    pub thresholds: Vec<f64>,
}

impl TagHead {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.net.out_dim() != self.vocab.len() || self.thresholds.len() != self.vocab.len() {
            return Err(Error::dim("tag head outputs", self.vocab.len(), self.net.out_dim()));
        }
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidParameter("thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn probabilities(&self, exam: &Exam) -> Result<Vec<f64>> {
        let x = concat_embedding(exam);
        if x.len() != self.net.in_dim() {
            return Err(Error::dim(
                format!("tag head input for `{}`", exam.exam_id),
                self.net.in_dim(),
                x.len(),
            ));
        }
        Ok(self.net.forward(&x)?.into_iter().map(sigmoid).collect())
    }
}

/// Indices whose probability exceeds its threshold; the single most probable
/// index when none does.
pub fn select_tags(probabilities: &[f64], thresholds: &[f64]) -> Vec<usize> {
    let picked: Vec<usize> = probabilities
        .iter()
        .zip(thresholds)
        .enumerate()
        .filter(|(_, (p, t))| p > t)
        .map(|(i, _)| i)
        .collect();
    if !picked.is_empty() || probabilities.is_empty() {
        return picked;
    }
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = i;
        }
    }
    vec![best]
}

pub fn predict_tags(head: &TagHead, exam: &Exam) -> Result<TagAssignment> {
    let probs = head.probabilities(exam)?;
    let tags = select_tags(&probs, &head.thresholds)
        .into_iter()
        .map(|i| head.vocab.tag(i).to_string())
        .collect();
    let probabilities = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (head.vocab.tag(i).to_string(), p))
        .collect();
    Ok(TagAssignment {
        exam_id: exam.exam_id.clone(),
        tags,
        probabilities,
    })
}

impl Tagger for TagHead {
    fn name(&self) -> String {
        "tag_head".into()
    }

    fn assign(&self, exam: &Exam) -> Result<TagAssignment> {
        predict_tags(self, exam)
    }
}

fn binary_f1(probs: &[f64], gold: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in probs.iter().zip(gold) {
        match (p > threshold, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Grid-searches thresholds maximizing F1 on validation data.
///
/// `probabilities[e][a]` is exam `e`'s probability for tag `a` and `gold[e][a]`
/// its label. Ties resolve to the smallest threshold; tags never positive in
/// validation keep [`DEFAULT_THRESHOLD`]. In global mode one threshold
/// maximizing the mean F1 over the tags present in validation is shared.
pub fn learn_thresholds(
    probabilities: &[Vec<f64>],
    gold: &[Vec<bool>],
    tag_count: usize,
    mode: ThresholdMode,
) -> Vec<f64> {
    let column = |a: usize| -> (Vec<f64>, Vec<bool>) {
        (
            probabilities.iter().map(|row| row[a]).collect(),
            gold.iter().map(|row| row[a]).collect(),
        )
    };
    let present: Vec<usize> = (0..tag_count).filter(|&a| gold.iter().any(|row| row[a])).collect();

    let argmax_grid = |score: &dyn Fn(f64) -> f64| -> f64 {
        let mut best = (f64::NEG_INFINITY, DEFAULT_THRESHOLD);
        for t in threshold_grid() {
            let s = score(t);
            if s > best.0 {
                best = (s, t);
            }
        }
        best.1
    };

    match mode {
        ThresholdMode::PerTag => (0..tag_count)
            .map(|a| {
                if !present.contains(&a) {
                    return DEFAULT_THRESHOLD;
                }
                let (p, g) = column(a);
                argmax_grid(&|t| binary_f1(&p, &g, t))
            })
            .collect(),
        ThresholdMode::Global => {
            if present.is_empty() {
                return vec![DEFAULT_THRESHOLD; tag_count];
            }
            let columns: Vec<_> = present.iter().map(|&a| column(a)).collect();
            let t =
                argmax_grid(&|t| columns.iter().map(|(p, g)| binary_f1(p, g, t)).sum::<f64>() / columns.len() as f64);
            vec![t; tag_count]
        }
    }
}

fn multi_hot(exam: &Exam, vocab: &TagVocabulary) -> Vec<f64> {
    let mut y = vec![0.0; vocab.len()];
    for tag in &exam.tags {
        if let Some(i) = vocab.position(tag) {
            y[i] = 1.0;
        }
    }
    y
}

/// Trains the multi-label head on abnormal train exams, then learns
/// thresholds on abnormal validation exams.
///
/// Alphabet tags that never occur among abnormal train exams are dropped.
pub fn train_tag_head(
    corpus: &Corpus,
    config: &TrainConfig,
    mode: ThresholdMode,
    seed: u64,
) -> Result<(TagHead, FitReport)> {
    let train: Vec<&Exam> = corpus.abnormal(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Empty("no abnormal exams in the train split".into()));
    }
    let vocab = TagVocabulary::new(train.iter().flat_map(|e| e.tags.iter().cloned()));
    for tag in corpus.tag_alphabet().tags() {
        if !vocab.contains(tag) {
            log::warn!("tag `{tag}` has no abnormal train exam and is dropped");
        }
    }
    let val: Vec<&Exam> = corpus.abnormal(Split::Val).collect();

    let xs: Vec<Vec<f64>> = train.iter().map(|e| concat_embedding(e)).collect();
    let ys: Vec<Vec<f64>> = train.iter().map(|e| multi_hot(e, &vocab)).collect();
    let vx: Vec<Vec<f64>> = val.iter().map(|e| concat_embedding(e)).collect();
    let vy: Vec<Vec<f64>> = val.iter().map(|e| multi_hot(e, &vocab)).collect();

    let mut rng = seed::rng(seed);
    let init = Mlp::glorot(&mut rng, corpus.embedding_dim(), &config.hidden, vocab.len());
    let (net, report) = fit_bce(init, &xs, &ys, &vx, &vy, config, &mut rng)?;

    let mut head = TagHead {
        net,
        thresholds: vec![DEFAULT_THRESHOLD; vocab.len()],
        vocab,
    };
    if !val.is_empty() {
        let probs = val.iter().map(|e| head.probabilities(e)).collect::<Result<Vec<_>>>()?;
        let gold: Vec<Vec<bool>> = vy.iter().map(|row| row.iter().map(|&v| v > 0.5).collect()).collect();
        head.thresholds = learn_thresholds(&probs, &gold, head.vocab.len(), mode);
    }
    Ok((head, report))
}

/// Non-parametric tagging baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Random,
    Nn1,
    Knn,
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMethod::Random => "random",
            BaselineMethod::Nn1 => "nn1",
            BaselineMethod::Knn => "knn",
        })
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "nn1" | "1nn" => Ok(Self::Nn1),
            "knn" => Ok(Self::Knn),
            other => Err(Error::InvalidParameter(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Rounds half away from zero, never below one.
pub fn round_count(x: f64) -> usize {
    (x.round() as usize).max(1)
}

/// A baseline bound to its training exams.
#[derive(Debug, Clone)]
pub struct BaselineTagger {
    method: BaselineMethod,
    index: EmbeddingIndex,
    alphabet: Vec<String>,
    random_count: usize,
    k_neighbors: usize,
    seed: u64,
}

impl BaselineTagger {
    /// `k_neighbors` is clamped to the number of train exams.
    pub fn new<'a, I>(method: BaselineMethod, train: I, k_neighbors: usize, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Exam>,
    {
        let train: Vec<&Exam> = train.into_iter().collect();
        if train.is_empty() {
            return Err(Error::Empty("baseline needs train exams".into()));
        }
        if method == BaselineMethod::Knn && k_neighbors == 0 {
            return Err(Error::InvalidParameter("kNN needs k >= 1".into()));
        }
        let index = build_index(train.iter().copied())?;
        let alphabet = TagVocabulary::new(train.iter().flat_map(|e| e.tags.iter().cloned()))
            .tags()
            .to_vec();
        let mean = train.iter().map(|e| e.tags.len()).sum::<usize>() as f64 / train.len() as f64;
        Ok(Self {
            method,
            k_neighbors: k_neighbors.clamp(1, train.len()),
            random_count: round_count(mean).min(alphabet.len()),
            alphabet,
            index,
            seed,
        })
    }

    pub fn method(&self) -> BaselineMethod {
        self.method
    }

    pub fn index(&self) -> &EmbeddingIndex {
        &self.index
    }

    fn random_tags(&self, exam_id: &str) -> TagSet {
        let mut rng = seed::keyed_rng(self.seed, exam_id);
        index::sample(&mut rng, self.alphabet.len(), self.random_count)
            .into_iter()
            .map(|i| self.alphabet[i].clone())
            .collect()
    }

    pub fn tags_for(&self, exam: &Exam) -> Result<TagSet> {
        match self.method {
            BaselineMethod::Random => Ok(self.random_tags(&exam.exam_id)),
            BaselineMethod::Nn1 => {
                let sims = self.index.similarities(&query_vector(exam)?)?;
                let row = self.index.argmax(&sims, None).expect("index is non-empty");
                Ok(self.index.tags(row).clone())
            }
            BaselineMethod::Knn => {
                let sims = self.index.similarities(&query_vector(exam)?)?;
                let neighbors = self.index.top_k(&sims, self.k_neighbors);
                Ok(knn_vote(neighbors.iter().map(|&r| self.index.tags(r))))
            }
        }
    }
}

/// Keeps the `r` most frequent tags of the neighbors, `r` being the rounded
/// mean neighbor tag count (at least one). Frequency ties resolve
/// lexicographically.
pub fn knn_vote<'a, I>(neighbor_tags: I) -> TagSet
where
    I: IntoIterator<Item = &'a TagSet>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut total = 0usize;
    let mut k = 0usize;
    for tags in neighbor_tags {
        k += 1;
        total += tags.len();
        for t in tags {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    if k == 0 {
        return TagSet::new();
    }
    let r = round_count(total as f64 / k as f64);
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(r).map(|(t, _)| t.to_string()).collect()
}

impl Tagger for BaselineTagger {
    fn name(&self) -> String {
        self.method.to_string()
    }

    fn assign(&self, exam: &Exam) -> Result<TagAssignment> {
        Ok(TagAssignment {
            exam_id: exam.exam_id.clone(),
            tags: self.tags_for(exam)?,
            probabilities: BTreeMap::new(),
        })
    }
}

/// One-shot form of [`BaselineTagger`].
pub fn baseline_tags(
    method: BaselineMethod,
    train: &[&Exam],
    exam: &Exam,
    k_neighbors: usize,
    seed: u64,
) -> Result<TagAssignment> {
    BaselineTagger::new(method, train.iter().copied(), k_neighbors, seed)?.assign(exam)
}

/// Tags the given worklist prefix, preserving its order.
pub fn tag_worklist(tagger: &dyn Tagger, corpus: &Corpus, exam_ids: &[String]) -> Result<Vec<TagAssignment>> {
    use rayon::prelude::*;
    let exams = exam_ids
        .iter()
        .map(|id| corpus.require(id))
        .collect::<Result<Vec<_>>>()?;
    exams.par_iter().map(|e| tagger.assign(e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseParams;

    fn set(tags: &[&str]) -> TagSet {
        tags.iter().map(|s| s.to_string()).collect()
    }

    fn exam(id: &str, emb: &[f64], tags: &[&str]) -> Exam {
        Exam {
            exam_id: id.into(),
            images: vec![emb.to_vec()],
            tags: set(tags),
            report: String::new(),
            split: Split::Train,
        }
    }

    #[test]
    fn selection_above_threshold() {
        assert_eq!(select_tags(&[0.9, 0.2, 0.8], &[0.5; 3]), vec![0, 2]);
    }

    #[test]
    fn selection_falls_back_to_argmax() {
        assert_eq!(select_tags(&[0.1, 0.4, 0.3], &[0.5; 3]), vec![1]);
        assert_eq!(select_tags(&[0.1, 0.4, 0.3], &[1.0; 3]), vec![1]);
        assert_eq!(select_tags(&[0.1, 0.4, 0.3], &[0.01; 3]), vec![0, 1, 2]);
    }

    #[test]
    fn separated_tag_threshold_lands_between_classes() {
        let probs: Vec<Vec<f64>> = [0.12, 0.505, 0.634, 0.712, 0.81, 0.93]
            .iter()
            .map(|&p| vec![p])
            .collect();
        let gold: Vec<Vec<bool>> = [false, false, false, true, true, true]
            .iter()
            .map(|&g| vec![g])
            .collect();
        let t = learn_thresholds(&probs, &gold, 1, ThresholdMode::PerTag)[0];
        assert!(t > 0.634 && t <= 0.712, "{t}");
        assert!(((t * 100.0).round() - t * 100.0).abs() < 1e-9);
        assert!((t - 0.64).abs() < 1e-12);
    }

    #[test]
    fn all_positive_tag_gets_lowest_grid_point() {
        let probs = vec![vec![0.3], vec![0.6], vec![0.9]];
        let gold = vec![vec![true]; 3];
        assert_eq!(learn_thresholds(&probs, &gold, 1, ThresholdMode::PerTag), vec![0.01]);
    }

    #[test]
    fn absent_tag_keeps_default() {
        let probs = vec![vec![0.3, 0.8], vec![0.6, 0.1]];
        let gold = vec![vec![false, true], vec![false, false]];
        let t = learn_thresholds(&probs, &gold, 2, ThresholdMode::PerTag);
        assert_eq!(t[0], DEFAULT_THRESHOLD);
        let g = learn_thresholds(&probs, &gold, 2, ThresholdMode::Global);
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn knn_vote_example() {
        let neighbors = [set(&["a", "b"]), set(&["a"]), set(&["a", "c"])];
        assert_eq!(knn_vote(neighbors.iter()), set(&["a", "b"]));
        assert!(knn_vote([set(&[]), set(&[])].iter()).is_empty());
    }

    #[test]
    fn nn1_copies_identical_neighbor() {
        let train = [exam("a", &[1.0, 0.0], &["x", "y"]), exam("b", &[0.0, 1.0], &["z"])];
        let refs: Vec<&Exam> = train.iter().collect();
        let got = baseline_tags(BaselineMethod::Nn1, &refs, &exam("q", &[0.0, 3.0], &[]), 1, 0).unwrap();
        assert_eq!(got.tags, set(&["z"]));
    }

    #[test]
    fn random_is_seeded_and_sized_by_mean() {
        let train = [
            exam("a", &[1.0, 0.0], &["x", "y"]),
            exam("b", &[0.0, 1.0], &["z", "w", "x"]),
            exam("c", &[1.0, 1.0], &["v"]),
        ];
        let refs: Vec<&Exam> = train.iter().collect();
        let q = exam("q", &[0.5, 0.1], &[]);
        let a = baseline_tags(BaselineMethod::Random, &refs, &q, 1, 42).unwrap();
        let b = baseline_tags(BaselineMethod::Random, &refs, &q, 1, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tags.len(), 2);
    }

    #[test]
    fn k_is_clamped_and_zero_rejected() {
        let train = [exam("a", &[1.0, 0.0], &["x"])];
        let refs: Vec<&Exam> = train.iter().collect();
        assert!(BaselineTagger::new(BaselineMethod::Knn, refs.iter().copied(), 50, 0).is_ok());
        assert!(BaselineTagger::new(BaselineMethod::Knn, refs.iter().copied(), 0, 0).is_err());
        assert!(BaselineTagger::new(BaselineMethod::Nn1, std::iter::empty(), 1, 0).is_err());
    }

    #[test]
    fn head_prediction_reports_probabilities() {
        let net = Mlp {
            layers: vec![DenseParams::zeros(2, 2)],
        };
        let head = TagHead {
            net,
            vocab: TagVocabulary::new(["p", "q"]),
            thresholds: vec![0.4, 0.6],
        };
        let a = predict_tags(&head, &exam("e", &[1.0, 2.0], &[])).unwrap();
        assert_eq!(a.tags, set(&["p"]));
        assert_eq!(a.probabilities["q"], 0.5);
        assert!(predict_tags(&head, &exam("e", &[1.0], &[])).is_err());
    }
}
