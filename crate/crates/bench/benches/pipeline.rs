use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;
use triage_core::corpus::{synth_corpus, Corpus, Exam, Split, SynthConfig};
use triage_core::decode::{greedy_decode, train_decoder, DecoderConfig, DecoderMode, TrainingPool};
use triage_core::metrics::{bleu, rouge_l_corpus, BleuConfig};
use triage_core::numerics::TrainConfig;
use triage_core::retrieve::query_vector;
use triage_core::tag::{train_tag_head, Tagger, ThresholdMode};
use triage_core::{build_index, rank_exams, train_binary_head};

fn corpus(n: usize, d: usize) -> Corpus {
    synth_corpus(&SynthConfig {
        seed: 1,
        n,
        d,
        m: 2,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    }
}

fn ranking(c: &mut Criterion) {
    let corpus = corpus(1000, 1024);
    let (head, _) = train_binary_head(&corpus, &quick(), 1).unwrap();
    let exams: Vec<&Exam> = corpus.exams().iter().take(500).collect();
    c.bench_function("rank 500 exams, dim 2048", |b| {
        b.iter(|| rank_exams(&head, black_box(&exams)).unwrap())
    });
}

fn retrieval(c: &mut Criterion) {
    let corpus = corpus(2600, 1024);
    let index = build_index(corpus.split(Split::Train).take(2000)).unwrap();
    let queries: Vec<Vec<f64>> = corpus
        .split(Split::Test)
        .take(100)
        .map(|e| query_vector(e).unwrap())
        .collect();
    let (tagger, _) = train_tag_head(&corpus, &quick(), ThresholdMode::PerTag, 1).unwrap();
    let test: Vec<&Exam> = corpus.split(Split::Test).take(100).collect();

    c.bench_function("similarities 100 x 2000", |b| {
        b.iter(|| index.batch_similarities(black_box(&queries)).unwrap())
    });
    c.bench_function("tag + 1NN+ 100 exams", |b| {
        b.iter(|| {
            for exam in &test {
                let tags = tagger.assign(exam).unwrap().tags;
                black_box(index.retrieve_1nn_plus(exam, &tags).unwrap());
            }
        })
    });
}

fn text_metrics(c: &mut Criterion) {
    let corpus = corpus(600, 8);
    let tokens: Vec<Vec<String>> = corpus
        .exams()
        .iter()
        .map(|e| e.report.split_whitespace().map(str::to_lowercase).collect())
        .collect();
    let (refs, cands) = tokens.split_at(tokens.len() / 2);
    let n = refs.len().min(cands.len());
    c.bench_function("BLEU-4 corpus", |b| {
        b.iter(|| bleu(black_box(&cands[..n]), &refs[..n], BleuConfig::default()).unwrap())
    });
    c.bench_function("ROUGE-L corpus", |b| {
        b.iter(|| rouge_l_corpus(black_box(&cands[..n]), &refs[..n], 1.0).unwrap())
    });
}

fn decoding(c: &mut Criterion) {
    let corpus = corpus(300, 8);
    let config = DecoderConfig {
        train: quick(),
        embed: 32,
        hidden: 64,
        ..DecoderConfig::default()
    };
    let (decoder, _) = train_decoder(&corpus, DecoderMode::TagsGates, TrainingPool::AbnormalOnly, &config, 1).unwrap();
    let exam = corpus.abnormal(Split::Test).next().unwrap();
    c.bench_function("greedy decode, gate conditioning", |b| {
        b.iter_batched(
            || exam.tags.clone(),
            |tags| greedy_decode(&decoder, exam, &tags).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, ranking, retrieval, text_metrics, decoding);
criterion_main!(benches);
