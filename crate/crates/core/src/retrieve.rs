//! Tag-constrained nearest-neighbor caption retrieval.
//!
//! Train exams are stored as L2-normalized rows, so cosine similarity against
//! every row is a single matrix–vector product. Rows are additionally grouped
//! by their exact tag set; a constrained query only searches the group whose
//! tag set equals the predicted one and falls back to the whole index when
//! that group does not exist.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{concat_embedding, Exam, TagSet};
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm};

/// Canonical bucket key of a tag set: sorted tags joined by U+001F.
pub fn tag_set_key(tags: &TagSet) -> String {
    tags.iter().map(String::as_str).collect::<Vec<_>>().join("\u{1f}")
}

/// Returns `v / ‖v‖`, rejecting zero vectors.
pub fn normalize(v: &[f64], what: &str) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("embedding of `{what}`")));
    }
    if norm == 0.0 {
        return Err(Error::ZeroNorm(what.to_string()));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Normalized concatenated embedding of an exam.
pub fn query_vector(exam: &Exam) -> Result<Vec<f64>> {
    normalize(&concat_embedding(exam), &exam.exam_id)
}

#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dim: usize,
    rows: Vec<f64>,
    ids: Vec<String>,
    tag_sets: Vec<TagSet>,
    reports: Vec<String>,
    buckets: BTreeMap<String, Vec<usize>>,
}

/// The neighbor picked for a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub exam_id: String,
    pub similarity: f64,
    /// True iff the neighbor came from the predicted tag set's bucket.
    pub constrained: bool,
    pub report: String,
    #[serde(skip)]
    pub row: usize,
}

/// Normalizes and stores `exams` in the given order.
pub fn build_index<'a, I>(exams: I) -> Result<EmbeddingIndex>
where
    I: IntoIterator<Item = &'a Exam>,
{
    let mut dim = None;
    let mut index = EmbeddingIndex {
        dim: 0,
        rows: Vec::new(),
        ids: Vec::new(),
        tag_sets: Vec::new(),
        reports: Vec::new(),
        buckets: BTreeMap::new(),
    };
    for exam in exams {
        let row = query_vector(exam)?;
        let d = *dim.get_or_insert(row.len());
        if row.len() != d {
            return Err(Error::dim(format!("index row `{}`", exam.exam_id), d, row.len()));
        }
        let i = index.ids.len();
        index.rows.extend(row);
        index.ids.push(exam.exam_id.clone());
        index.buckets.entry(tag_set_key(&exam.tags)).or_default().push(i);
        index.tag_sets.push(exam.tags.clone());
        index.reports.push(exam.report.clone());
    }
    index.dim = dim.ok_or_else(|| Error::Empty("cannot index zero exams".into()))?;
    Ok(index)
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn tags(&self, i: usize) -> &TagSet {
        &self.tag_sets[i]
    }

    pub fn report(&self, i: usize) -> &str {
        &self.reports[i]
    }

    pub fn bucket(&self, tags: &TagSet) -> Option<&[usize]> {
        self.buckets.get(&tag_set_key(tags)).map(Vec::as_slice)
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.buckets.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Dot product of every row with a unit-norm `query`.
    pub fn similarities(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::dim("similarity query", self.dim, query.len()));
        }
        Ok(self.rows.chunks_exact(self.dim).map(|row| dot(row, query)).collect())
    }

    /// Similarities for several queries as one matrix–matrix product
    /// (`queries · rowsᵀ`), one output row per query.
    pub fn batch_similarities(&self, queries: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(q) = queries.iter().find(|q| q.len() != self.dim) {
            return Err(Error::dim("similarity query", self.dim, q.len()));
        }
        Ok(queries
            .par_iter()
            .map(|q| self.rows.chunks_exact(self.dim).map(|row| dot(row, q)).collect())
            .collect())
    }

    fn better(&self, sims: &[f64], a: usize, b: usize) -> bool {
        match sims[a].partial_cmp(&sims[b]).unwrap_or(Ordering::Equal) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => self.ids[a] < self.ids[b],
        }
    }

    /// Most similar row among `candidates` (all rows when `None`); ties go to
    /// the smaller exam_id.
    pub fn argmax(&self, sims: &[f64], candidates: Option<&[usize]>) -> Option<usize> {
        let mut best: Option<usize> = None;
        let mut consider = |i: usize| {
            if best.is_none_or(|b| self.better(sims, i, b)) {
                best = Some(i);
            }
        };
        match candidates {
            Some(c) => c.iter().copied().for_each(&mut consider),
            None => (0..self.len()).for_each(&mut consider),
        }
        best
    }

    /// The `k` most similar rows in decreasing similarity (ties by exam_id).
    pub fn top_k(&self, sims: &[f64], k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            sims[b]
                .partial_cmp(&sims[a])
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        });
        order.truncate(k.min(self.len()));
        order
    }

    fn result(&self, row: usize, sims: &[f64], constrained: bool) -> RetrievalResult {
        RetrievalResult {
            exam_id: self.ids[row].clone(),
            similarity: sims[row],
            constrained,
            report: self.reports[row].clone(),
            row,
        }
    }

    /// Nearest train exam over the whole index.
    pub fn retrieve_1nn(&self, exam: &Exam) -> Result<RetrievalResult> {
        let sims = self.similarities(&query_vector(exam)?)?;
        Ok(self.retrieve_1nn_from(&sims))
    }

    /// [`retrieve_1nn`](Self::retrieve_1nn) on precomputed similarities.
    pub fn retrieve_1nn_from(&self, sims: &[f64]) -> RetrievalResult {
        let row = self.argmax(sims, None).expect("index is non-empty");
        self.result(row, sims, false)
    }

    /// Nearest train exam whose gold tag set equals `predicted`, or the global
    /// nearest when no train exam has exactly that tag set.
    pub fn retrieve_1nn_plus(&self, exam: &Exam, predicted: &TagSet) -> Result<RetrievalResult> {
        let sims = self.similarities(&query_vector(exam)?)?;
        Ok(self.retrieve_1nn_plus_from(&sims, predicted))
    }

    /// [`retrieve_1nn_plus`](Self::retrieve_1nn_plus) on precomputed similarities.
    pub fn retrieve_1nn_plus_from(&self, sims: &[f64], predicted: &TagSet) -> RetrievalResult {
        match self.bucket(predicted) {
            Some(rows) if !rows.is_empty() => {
                let row = self.argmax(sims, Some(rows)).expect("bucket is non-empty");
                self.result(row, sims, true)
            }
            _ => {
                let row = self.argmax(sims, None).expect("index is non-empty");
                self.result(row, sims, false)
            }
        }
    }
}
