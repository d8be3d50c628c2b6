use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Corpus, Exam, Split, TagSet};
use crate::error::{Error, Result};

/// Tag names used by the generator, in the order they are activated.
///
/// The first thirteen coincide with keywords of the default labeler lexicon so
/// that clinical precision/recall is meaningful on synthetic reports.
pub const TAG_POOL: [&str; 32] = [
    "atelectasis",
    "cardiomegaly",
    "pleural effusion",
    "pneumonia",
    "edema",
    "consolidation",
    "pneumothorax",
    "lung opacity",
    "fracture",
    "lung lesion",
    "enlarged cardiomediastinum",
    "pleural thickening",
    "pacemaker",
    "granuloma",
    "scoliosis",
    "emphysema",
    "hernia",
    "hyperinflation",
    "osteophyte",
    "kyphosis",
    "spondylosis",
    "calcinosis",
    "aortic tortuosity",
    "degenerative change",
    "cicatrix",
    "bronchiectasis",
    "hyperlucency",
    "sclerosis",
    "deformity",
    "diaphragm elevation",
    "hilar prominence",
    "cysts",
];

const FINDING_TEMPLATES: [&str; 4] = [
    "There is {}.",
    "Findings are consistent with {}.",
    "{} is seen.",
    "Possible {}.",
];

const NORMAL_PHRASES: [&str; 7] = [
    "The lungs are clear.",
    "Heart size is normal.",
    "No pleural effusion or pneumothorax.",
    "The mediastinal contours are unremarkable.",
    "Bony structures are intact.",
    "There is no focal airspace disease.",
    "The cardiac silhouette is within normal limits.",
];

const NORMAL_REPORTS: [&str; 4] = [
    "The lungs are clear. Heart size is normal. No pleural effusion or pneumothorax.",
    "Heart size is normal. The mediastinal contours are unremarkable. The lungs are clear.",
    "The cardiac silhouette is within normal limits. There is no focal airspace disease. Bony structures are intact.",
    "The lungs are clear. No pleural effusion or pneumothorax. Bony structures are intact.",
];

/// Weights for drawing 1, 2, 3 or 4 tags per abnormal exam.
const TAG_COUNT_WEIGHTS: [f64; 4] = [0.3, 0.35, 0.2, 0.15];

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n: usize,
    /// Per-image embedding dimension.
    pub d: usize,
    /// Images per exam.
    pub m: usize,
    pub tag_count: usize,
    pub abnormal_fraction: f64,
    /// Distance of each cluster mean from the origin, in units of the noise σ.
    pub separation: f64,
    pub noise: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 1000,
            d: 1024,
            m: 2,
            tag_count: 8,
            abnormal_fraction: 0.5,
            separation: 4.0,
            noise: 1.0,
            val_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.n < 10 {
            return bad("synthetic corpus needs n >= 10");
        }
        if self.d < 2 {
            return bad("synthetic corpus needs d >= 2");
        }
        if self.m < 1 {
            return bad("synthetic corpus needs m >= 1");
        }
        if !(1..=TAG_POOL.len()).contains(&self.tag_count) {
            return bad("tag_count must be in 1..=32");
        }
        if !(self.abnormal_fraction > 0.0 && self.abnormal_fraction < 1.0) {
            return bad("abnormal_fraction must be in (0, 1)");
        }
        if !(self.separation.is_finite() && self.noise.is_finite() && self.noise > 0.0) {
            return bad("separation and noise must be finite, noise > 0");
        }
        let splits_ok =
            self.val_fraction >= 0.0 && self.test_fraction >= 0.0 && self.val_fraction + self.test_fraction < 1.0;
        if !splits_ok {
            return bad("val_fraction + test_fraction must be in [0, 1)");
        }
        Ok(())
    }
}

/// Generates a deterministic corpus from `config`.
///
/// Abnormal exams sit around a shared abnormality direction plus one
/// direction per active tag, each `separation` noise units from the origin;
/// normal exams are centered at the origin. Reports mention the keyword of
/// every tag, and normal reports are drawn verbatim from a small pool.
pub fn synth_corpus(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tags: Vec<&str> = TAG_POOL[..config.tag_count].to_vec();
    let directions = orthonormal_directions(&mut rng, config.tag_count + 1, config.d);

    let n_abnormal = (config.n as f64 * config.abnormal_fraction).round() as usize;
    let mut abnormal = vec![false; config.n];
    for i in index::sample(&mut rng, config.n, n_abnormal) {
        abnormal[i] = true;
    }
    let splits = stratified_splits(&mut rng, &abnormal, config);

    let width = (config.n.max(2) - 1).to_string().len();
    let mut exams = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let tag_set = if abnormal[i] {
            draw_tags(&mut rng, &tags)
        } else {
            TagSet::new()
        };

        let mut mean = vec![0.0; config.d];
        if abnormal[i] {
            add_scaled(&mut mean, &directions[0], config.separation);
            for tag in &tag_set {
                let t = tags.iter().position(|x| x == tag).expect("tag drawn from pool");
                add_scaled(&mut mean, &directions[t + 1], config.separation);
            }
        }
        let images = (0..config.m)
            .map(|_| {
                mean.iter()
                    .map(|&mu| mu + config.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();

        let report = if abnormal[i] {
            abnormal_report(&mut rng, &tag_set)
        } else {
            NORMAL_REPORTS[rng.random_range(0..NORMAL_REPORTS.len())].to_string()
        };

        exams.push(Exam {
            exam_id: format!("exam-{i:0width$}"),
            images,
            tags: tag_set,
            report,
            split: splits[i],
        });
    }
    Corpus::new(exams, Some(config.m))
}

fn add_scaled(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

/// Random unit vectors, orthogonalized while `d` allows.
fn orthonormal_directions(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        loop {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            if k < d {
                for u in &out[..k.min(out.len())] {
                    let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    add_scaled(&mut v, u, -dot);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                out.push(v);
                break;
            }
        }
    }
    out
}

/// Splits normal and abnormal exams separately so every split keeps the class ratio.
fn stratified_splits(rng: &mut ChaCha8Rng, abnormal: &[bool], config: &SynthConfig) -> Vec<Split> {
    let mut splits = vec![Split::Train; abnormal.len()];
    for class in [true, false] {
        let mut members: Vec<usize> = (0..abnormal.len()).filter(|&i| abnormal[i] == class).collect();
        members.shuffle(rng);
        let n = members.len() as f64;
        let n_test = (n * config.test_fraction).round() as usize;
        let n_val = (n * config.val_fraction).round() as usize;
        for (rank, &i) in members.iter().enumerate() {
            splits[i] = if rank < n_test {
                Split::Test
            } else if rank < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }
    splits
}

fn draw_tags(rng: &mut ChaCha8Rng, tags: &[&str]) -> TagSet {
    let max = tags.len().min(TAG_COUNT_WEIGHTS.len());
    let total: f64 = TAG_COUNT_WEIGHTS[..max].iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut count = max;
    for (k, w) in TAG_COUNT_WEIGHTS[..max].iter().enumerate() {
        if u < *w {
            count = k + 1;
            break;
        }
        u -= w;
    }
    index::sample(rng, tags.len(), count)
        .into_iter()
        .map(|i| tags[i].to_string())
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn abnormal_report(rng: &mut ChaCha8Rng, tags: &TagSet) -> String {
    let mut sentences: Vec<String> = tags
        .iter()
        .map(|tag| {
            let template = FINDING_TEMPLATES[rng.random_range(0..FINDING_TEMPLATES.len())];
            capitalize(&template.replace("{}", tag))
        })
        .collect();

    let compatible: Vec<&str> = NORMAL_PHRASES
        .iter()
        .copied()
        .filter(|phrase| {
            let lower = phrase.to_lowercase();
            tags.iter().all(|t| !lower.contains(t.as_str()))
        })
        .collect();
    let extra = rng.random_range(1..=2).min(compatible.len());
    for i in index::sample(rng, compatible.len(), extra).into_vec() {
        sentences.push(compatible[i].to_string());
    }
    sentences.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{concat_embedding, write_exams};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n: 100,
            d: 8,
            m: 2,
            tag_count: 4,
            abnormal_fraction: 0.5,
            ..SynthConfig::default()
        }
    }

    fn serialize(corpus: &Corpus) -> Vec<u8> {
        let mut buf = Vec::new();
        write_exams(&mut buf, corpus.exams()).unwrap();
        buf
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = synth_corpus(&small(7)).unwrap();
        let b = synth_corpus(&small(7)).unwrap();
        assert_eq!(serialize(&a), serialize(&b));
        let c = synth_corpus(&small(8)).unwrap();
        assert_ne!(serialize(&a), serialize(&c));
    }

    #[test]
    fn abnormal_count_is_rounded_fraction() {
        let corpus = synth_corpus(&SynthConfig {
            abnormal_fraction: 0.61,
            ..small(3)
        })
        .unwrap();
        assert_eq!(corpus.exams().iter().filter(|e| e.abnormal()).count(), 61);
    }

    #[test]
    fn reports_mention_every_tag() {
        let corpus = synth_corpus(&SynthConfig {
            tag_count: 12,
            n: 400,
            ..small(11)
        })
        .unwrap();
        for exam in corpus.exams() {
            let report = exam.report.to_lowercase();
            for tag in &exam.tags {
                assert!(report.contains(tag.as_str()), "{} lacks {tag}", exam.exam_id);
            }
            assert!((1..=4).contains(&exam.tags.len()) || !exam.abnormal());
        }
    }

    #[test]
    fn embedding_length_is_m_times_d() {
        let corpus = synth_corpus(&small(5)).unwrap();
        for exam in corpus.exams() {
            assert_eq!(concat_embedding(exam).len(), 16);
        }
    }

    #[test]
    fn every_split_has_both_classes() {
        let corpus = synth_corpus(&small(9)).unwrap();
        for split in [Split::Train, Split::Val, Split::Test] {
            assert!(corpus.split(split).any(|e| e.abnormal()));
            assert!(corpus.split(split).any(|e| !e.abnormal()));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        for cfg in [
            SynthConfig { n: 9, ..small(0) },
            SynthConfig { d: 1, ..small(0) },
            SynthConfig {
                tag_count: 0,
                ..small(0)
            },
            SynthConfig {
                tag_count: 33,
                ..small(0)
            },
            SynthConfig {
                abnormal_fraction: 1.0,
                ..small(0)
            },
            SynthConfig {
                abnormal_fraction: 0.0,
                ..small(0)
            },
        ] {
            assert!(matches!(synth_corpus(&cfg), Err(Error::InvalidParameter(_))));
        }
    }
}
