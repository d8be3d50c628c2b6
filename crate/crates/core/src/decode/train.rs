use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lstm::Stepper;
use super::{
    preprocess, sequence_loss, sequence_loss_and_grad, ConditionedDecoderParams, Conditioning, DecoderDims,
    DecoderMode, TextVocab, TrainingSequence, END_ID, PAD_ID, START_ID,
};
use crate::corpus::{concat_embedding, Corpus, Exam, Split, TagSet};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamState, DenseParams, FitReport, Matrix, Parameterized, TrainConfig};
use crate::persist::{self, CHECKPOINT_VERSION};
use crate::seed;

/// Decoder hyper-parameters on top of the shared optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub train: TrainConfig,
    pub embed: usize,
    pub hidden: usize,
    pub max_caption_length: usize,
    pub min_word_freq: usize,
    /// Global gradient-norm clip; zero disables clipping.
    pub grad_clip: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            embed: 64,
            hidden: 128,
            max_caption_length: 60,
            min_word_freq: 2,
            grad_clip: 5.0,
        }
    }
}

/// Which training exams the decoder learns from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingPool {
    #[default]
    AbnormalOnly,
    AllExams,
}

/// Trained decoder weights together with their vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedDecoder {
    pub params: ConditionedDecoderParams,
    pub vocab: TextVocab,
}

/// Teacher-forcing sequence for an exam: the report truncated to the
/// maximum caption length, closed by `<end>`, and in prefix mode preceded by
/// the tag tokens (which carry no loss).
pub fn build_sequence(vocab: &TextVocab, mode: DecoderMode, exam: &Exam, tags: &TagSet) -> Result<TrainingSequence> {
    let mut words = vocab.encode(&preprocess(&exam.report));
    words.truncate(vocab.max_caption_length);
    let tag_ids = if mode.uses_tags() {
        vocab.tag_ids(tags)
    } else {
        Vec::new()
    };
    if mode.uses_tags() && tag_ids.is_empty() {
        return Err(Error::Empty(format!(
            "exam `{}` has no tags for {mode} decoding",
            exam.exam_id
        )));
    }
    let mut inputs = Vec::with_capacity(words.len() + tag_ids.len() + 1);
    let mut targets = Vec::with_capacity(inputs.capacity());
    if mode == DecoderMode::TagsPrefix {
        inputs.extend_from_slice(&tag_ids);
        targets.extend(std::iter::repeat_n(None, tag_ids.len()));
    }
    inputs.push(START_ID);
    inputs.extend_from_slice(&words);
    targets.extend(words.iter().copied().map(Some));
    targets.push(Some(END_ID));
    Ok(TrainingSequence {
        conditioning: Conditioning {
            visual: concat_embedding(exam),
            tag_ids,
        },
        inputs,
        targets,
    })
}

fn mean_token_loss(params: &ConditionedDecoderParams, seqs: &[TrainingSequence]) -> Result<f64> {
    let parts = seqs
        .par_iter()
        .map(|s| sequence_loss(params, s))
        .collect::<Result<Vec<_>>>()?;
    let (loss, count) = parts.iter().fold((0.0, 0), |(l, c), (sl, sc)| (l + sl, c + sc));
    Ok(if count == 0 { 0.0 } else { loss / count as f64 })
}

fn add_into(acc: &mut ConditionedDecoderParams, other: &ConditionedDecoderParams) {
    for ((_, a), (_, b)) in acc.blocks_mut().into_iter().zip(other.blocks()) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

fn clip_global_norm(grads: &mut ConditionedDecoderParams, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads
        .blocks()
        .iter()
        .flat_map(|(_, b)| b.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, b) in grads.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Trains on the corpus training split, validating on the matching part of
/// the validation split.
pub fn train_decoder(
    corpus: &Corpus,
    mode: DecoderMode,
    pool: TrainingPool,
    config: &DecoderConfig,
    seed: u64,
) -> Result<(ConditionedDecoder, FitReport)> {
    if mode.uses_tags() && pool == TrainingPool::AllExams {
        return Err(Error::InvalidParameter(format!(
            "{mode} decoding needs tags, so it cannot train on normal exams"
        )));
    }
    let keep = |e: &&Exam| pool == TrainingPool::AllExams || e.abnormal();
    let train: Vec<&Exam> = corpus.split(Split::Train).filter(keep).collect();
    let val: Vec<&Exam> = corpus.split(Split::Val).filter(keep).collect();
    train_decoder_on(&train, &val, mode, config, seed)
}

/// Teacher-forced cross-entropy training with Adam, the plateau schedule and
/// early stopping on validation loss. Gold tags condition the tag modes.
///
/// Per-sequence gradients within a batch are computed in parallel and summed
/// in batch order, so results depend only on the seed.
pub fn train_decoder_on(
    train: &[&Exam],
    val: &[&Exam],
    mode: DecoderMode,
    config: &DecoderConfig,
    seed: u64,
) -> Result<(ConditionedDecoder, FitReport)> {
    config.train.validate()?;
    if config.embed == 0 || config.hidden == 0 {
        return Err(Error::InvalidParameter("decoder sizes must be positive".into()));
    }
    let first = train
        .first()
        .ok_or_else(|| Error::Empty("no decoder training exams".into()))?;
    let visual = first.embedding_len();
    if let Some(bad) = train.iter().chain(val).find(|e| e.embedding_len() != visual) {
        return Err(Error::dim(
            format!("embedding of `{}`", bad.exam_id),
            visual,
            bad.embedding_len(),
        ));
    }

    let texts: Vec<Vec<String>> = train.iter().map(|e| preprocess(&e.report)).collect();
    let all_tags: Vec<&str> = train.iter().flat_map(|e| e.tags.iter().map(String::as_str)).collect();
    let vocab = TextVocab::build(
        texts.iter().map(Vec::as_slice),
        all_tags,
        config.min_word_freq,
        config.max_caption_length,
    );
    let dims = DecoderDims {
        vocab: vocab.len(),
        embed: config.embed,
        hidden: config.hidden,
        visual,
    };
    let mut rng = seed::rng(seed);
    let mut params = ConditionedDecoderParams::random(&mut rng, mode, dims);

    let train_seqs = train
        .iter()
        .map(|e| build_sequence(&vocab, mode, e, &e.tags))
        .collect::<Result<Vec<_>>>()?;
    let val_seqs = val
        .iter()
        .map(|e| build_sequence(&vocab, mode, e, &e.tags))
        .collect::<Result<Vec<_>>>()?;
    log::info!(
        "training {mode} decoder: {} train / {} val sequences, vocabulary {}",
        train_seqs.len(),
        val_seqs.len(),
        vocab.len()
    );

    let monitor = |p: &ConditionedDecoderParams| -> Result<(f64, f64)> {
        let t = mean_token_loss(p, &train_seqs)?;
        let v = if val_seqs.is_empty() {
            t
        } else {
            mean_token_loss(p, &val_seqs)?
        };
        Ok((t, v))
    };
    let (initial_train_loss, initial_val) = monitor(&params)?;
    let mut best = (params.clone(), initial_train_loss, initial_val, 0usize);
    let mut adam = AdamState::new(config.train.adam());
    let mut scheduler = config.train.scheduler();
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    let (mut stale, mut epochs_run) = (0, 0);

    for epoch in 1..=config.train.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for batch in order.chunks(config.train.batch_size) {
            let tokens: usize = batch
                .iter()
                .map(|&i| train_seqs[i].targets.iter().flatten().count())
                .sum();
            let scale = 1.0 / tokens.max(1) as f64;
            let parts = batch
                .par_iter()
                .map(|&i| {
                    let mut g = params.zeros_like();
                    sequence_loss_and_grad(&params, &train_seqs[i], scale, &mut g).map(|_| g)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = params.zeros_like();
            for g in &parts {
                add_into(&mut grads, g);
            }
            clip_global_norm(&mut grads, config.grad_clip);
            adam_step(&mut adam, &mut params, &grads)?;
        }
        let (train_loss, val_loss) = monitor(&params)?;
        log::debug!(
            "epoch {epoch}: train {train_loss:.4} val {val_loss:.4} lr {:.1e}",
            adam.lr
        );
        adam.lr = scheduler.update(val_loss, adam.lr);
        if val_loss < best.2 {
            best = (params.clone(), train_loss, val_loss, epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.train.early_stop_patience {
                break;
            }
        }
    }

    let (params, train_loss, val_loss, best_epoch) = best;
    Ok((
        ConditionedDecoder { params, vocab },
        FitReport {
            epochs_run,
            best_epoch,
            train_loss,
            val_loss,
            initial_train_loss,
        },
    ))
}

/// Greedy caption for an exam. `tags` are ignored in `snt` mode and must be
/// non-empty otherwise; `<start>` and `<pad>` are never emitted.
pub fn greedy_decode(decoder: &ConditionedDecoder, exam: &Exam, tags: &TagSet) -> Result<Vec<String>> {
    let ConditionedDecoder { params, vocab } = decoder;
    let mode = params.mode;
    let tag_ids = if mode.uses_tags() {
        vocab.tag_ids(tags)
    } else {
        Vec::new()
    };
    let cond = Conditioning {
        visual: concat_embedding(exam),
        tag_ids,
    };
    let mut stepper = Stepper::new(params, &cond)?;
    let mut out = Vec::new();
    if vocab.max_caption_length == 0 {
        return Ok(out);
    }
    if mode == DecoderMode::TagsPrefix {
        for &t in &cond.tag_ids {
            stepper.feed(t);
        }
    }
    let mut logits = stepper.feed(START_ID);
    while out.len() < vocab.max_caption_length {
        let mut best = END_ID;
        for (id, &l) in logits.iter().enumerate() {
            if id == START_ID || id == PAD_ID {
                continue;
            }
            if l > logits[best] {
                best = id;
            }
        }
        if best == END_ID {
            break;
        }
        out.push(vocab.token(best).to_string());
        logits = stepper.feed(best);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum WeightArray {
    Matrix(Vec<Vec<f64>>),
    Vector(Vec<f64>),
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDims {
    vocab: usize,
    embed: usize,
    hidden: usize,
    visual: usize,
    max_caption_length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct DecoderCheckpoint {
    version: u32,
    mode: DecoderMode,
    dims: CheckpointDims,
    vocab: Vec<String>,
    weights: BTreeMap<String, WeightArray>,
}

fn take_matrix(weights: &mut BTreeMap<String, WeightArray>, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
    let m = match weights.remove(name) {
        Some(WeightArray::Matrix(r)) => Matrix::from_rows(r)?,
        Some(WeightArray::Vector(v)) if v.is_empty() => Matrix::zeros(0, cols),
        Some(WeightArray::Vector(_)) => return Err(Error::Checkpoint(format!("`{name}` should be a matrix"))),
        None => return Err(Error::Checkpoint(format!("missing weight block `{name}`"))),
    };
    if m.rows() != rows || (rows > 0 && m.cols() != cols) {
        return Err(Error::Checkpoint(format!(
            "`{name}` is {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(if rows == 0 { Matrix::zeros(0, cols) } else { m })
}

fn take_vector(weights: &mut BTreeMap<String, WeightArray>, name: &str, len: usize) -> Result<Vec<f64>> {
    let v = match weights.remove(name) {
        Some(WeightArray::Vector(v)) => v,
        Some(WeightArray::Matrix(m)) if m.is_empty() => Vec::new(),
        Some(WeightArray::Matrix(_)) => return Err(Error::Checkpoint(format!("`{name}` should be a vector"))),
        None => return Err(Error::Checkpoint(format!("missing weight block `{name}`"))),
    };
    if v.len() != len {
        return Err(Error::Checkpoint(format!(
            "`{name}` has length {}, expected {len}",
            v.len()
        )));
    }
    Ok(v)
}

fn take_dense(
    weights: &mut BTreeMap<String, WeightArray>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<DenseParams> {
    let w = take_matrix(weights, &format!("{name}.weight"), rows, cols)?;
    let b = take_vector(weights, &format!("{name}.bias"), rows)?;
    DenseParams::new(w, b)
}

impl ConditionedDecoder {
    fn to_checkpoint(&self) -> DecoderCheckpoint {
        let p = &self.params;
        let mut weights = BTreeMap::new();
        weights.insert("embedding".to_string(), WeightArray::Matrix(p.embedding.to_rows()));
        let mut put = |name: &str, d: &DenseParams| {
            weights.insert(format!("{name}.weight"), WeightArray::Matrix(d.weight.to_rows()));
            weights.insert(format!("{name}.bias"), WeightArray::Vector(d.bias.clone()));
        };
        for (name, g) in ["gate_i", "gate_f", "gate_o", "gate_q"].iter().zip(p.gates()) {
            put(name, g);
        }
        if let Some(init) = &p.init {
            put("init", init);
        }
        put("output", &p.output);
        DecoderCheckpoint {
            version: CHECKPOINT_VERSION,
            mode: p.mode,
            dims: CheckpointDims {
                vocab: p.dims.vocab,
                embed: p.dims.embed,
                hidden: p.dims.hidden,
                visual: p.dims.visual,
                max_caption_length: self.vocab.max_caption_length,
            },
            vocab: self.vocab.tokens().to_vec(),
            weights,
        }
    }

    fn from_checkpoint(ck: DecoderCheckpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        let DecoderCheckpoint {
            mode,
            dims: cd,
            vocab,
            mut weights,
            ..
        } = ck;
        let vocab = TextVocab::from_tokens(vocab, cd.max_caption_length)?;
        let dims = DecoderDims {
            vocab: cd.vocab,
            embed: cd.embed,
            hidden: cd.hidden,
            visual: cd.visual,
        };
        if vocab.len() != dims.vocab {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} tokens but dims say {}",
                vocab.len(),
                dims.vocab
            )));
        }
        let width = ConditionedDecoderParams::gate_input_width(mode, &dims);
        let w = &mut weights;
        let params = ConditionedDecoderParams {
            mode,
            dims,
            embedding: take_matrix(w, "embedding", dims.vocab, dims.embed)?,
            gate_i: take_dense(w, "gate_i", dims.hidden, width)?,
            gate_f: take_dense(w, "gate_f", dims.hidden, width)?,
            gate_o: take_dense(w, "gate_o", dims.hidden, width)?,
            gate_q: take_dense(w, "gate_q", dims.hidden, width)?,
            init: if mode.gate_conditioned() {
                None
            } else {
                Some(take_dense(w, "init", dims.hidden, dims.visual)?)
            },
            output: take_dense(w, "output", dims.vocab, dims.hidden)?,
        };
        if let Some(extra) = weights.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected weight block `{extra}`")));
        }
        params.validate()?;
        Ok(Self { params, vocab })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        persist::check_version(text)?;
        Self::from_checkpoint(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        persist::write_text(path.as_ref(), &self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&persist::read_text(path.as_ref())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthConfig};

    fn small_config(epochs: usize) -> DecoderConfig {
        DecoderConfig {
            train: TrainConfig {
                lr: 1e-2,
                max_epochs: epochs,
                ..TrainConfig::default()
            },
            embed: 8,
            hidden: 16,
            max_caption_length: 30,
            min_word_freq: 1,
            grad_clip: 5.0,
        }
    }

    fn corpus() -> Corpus {
        synth_corpus(&SynthConfig {
            seed: 3,
            n: 80,
            d: 6,
            m: 2,
            tag_count: 5,
            abnormal_fraction: 0.6,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn prefix_sequence_layout() {
        let c = corpus();
        let exam = c.abnormal(Split::Train).next().unwrap();
        let texts = [preprocess(&exam.report)];
        let vocab = TextVocab::build(
            texts.iter().map(Vec::as_slice),
            exam.tags.iter().map(String::as_str),
            1,
            60,
        );
        let seq = build_sequence(&vocab, DecoderMode::TagsPrefix, exam, &exam.tags).unwrap();
        let n = exam.tags.len();
        assert_eq!(seq.inputs[n], START_ID);
        assert!(seq.targets[..n].iter().all(Option::is_none));
        assert_eq!(*seq.targets.last().unwrap(), Some(END_ID));
        assert_eq!(seq.inputs.len(), seq.targets.len());
        let snt = build_sequence(&vocab, DecoderMode::Snt, exam, &TagSet::new()).unwrap();
        assert!(snt.conditioning.tag_ids.is_empty());
        assert!(build_sequence(&vocab, DecoderMode::TagsGates, exam, &TagSet::new()).is_err());
    }

    #[test]
    fn training_is_deterministic_and_lowers_loss() {
        let c = corpus();
        let (a, ra) = train_decoder(
            &c,
            DecoderMode::TagsGates,
            TrainingPool::AbnormalOnly,
            &small_config(1),
            11,
        )
        .unwrap();
        let (b, _) = train_decoder(
            &c,
            DecoderMode::TagsGates,
            TrainingPool::AbnormalOnly,
            &small_config(1),
            11,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(ra.train_loss < ra.initial_train_loss);
        assert!((ra.initial_train_loss - (a.vocab.len() as f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn tag_modes_cannot_use_normal_exams() {
        let c = corpus();
        let r = train_decoder(&c, DecoderMode::TagsPrefix, TrainingPool::AllExams, &small_config(1), 0);
        assert!(r.is_err());
        assert!(train_decoder_on(&[], &[], DecoderMode::Snt, &small_config(1), 0).is_err());
    }

    #[test]
    fn greedy_decoding_limits_and_determinism() {
        let c = corpus();
        let (mut dec, _) = train_decoder(&c, DecoderMode::Snt, TrainingPool::AllExams, &small_config(3), 5).unwrap();
        let exam = c.split(Split::Test).next().unwrap();
        let a = greedy_decode(&dec, exam, &TagSet::new()).unwrap();
        let other: TagSet = ["whatever".to_string()].into();
        assert_eq!(a, greedy_decode(&dec, exam, &other).unwrap());
        assert!(a.len() <= 30);
        dec.vocab.max_caption_length = 0;
        assert!(greedy_decode(&dec, exam, &TagSet::new()).unwrap().is_empty());
        dec.vocab.max_caption_length = 2;
        assert!(greedy_decode(&dec, exam, &TagSet::new()).unwrap().len() <= 2);
    }

    #[test]
    fn checkpoint_round_trip_and_version_check() {
        let c = corpus();
        for mode in DecoderMode::all() {
            let (dec, _) = train_decoder(&c, mode, TrainingPool::AbnormalOnly, &small_config(1), 2).unwrap();
            let json = dec.to_json().unwrap();
            let back = ConditionedDecoder::from_json(&json).unwrap();
            assert_eq!(back, dec);
            let value: serde_json::Value = serde_json::from_str(&json).unwrap();
            assert_eq!(value["version"], 1);
            assert_eq!(value["mode"], mode.to_string());
            let bumped = json.replacen("\"version\":1", "\"version\":2", 1);
            assert!(ConditionedDecoder::from_json(&bumped).is_err());
        }
    }
}
