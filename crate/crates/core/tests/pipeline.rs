//! Cross-module behavior: corpus IO, checkpoints and the rank → tag → retrieve chain.

use std::io::BufReader;

use triage_core::corpus::{load_corpus, parse_corpus, synth_corpus, write_corpus, Split, SynthConfig};
use triage_core::labeler::{extract_labels, LabelLexicon};
use triage_core::numerics::TrainConfig;
use triage_core::rank::score_exam;
use triage_core::{
    build_index, predict_tags, rank_exams, train_binary_head, train_tag_head, BinaryHead, Checkpoint, Exam,
    RankedWorklist, TagHead, ThresholdMode,
};

fn small() -> SynthConfig {
    SynthConfig {
        seed: 13,
        n: 240,
        d: 16,
        m: 2,
        ..SynthConfig::default()
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        max_epochs: 40,
        ..TrainConfig::default()
    }
}

#[test]
fn corpus_round_trips_through_jsonl() {
    let corpus = synth_corpus(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/corpus.jsonl");
    write_corpus(&path, &corpus).unwrap();
    let back = load_corpus(&path, Some(2)).unwrap();
    assert_eq!(back.exams(), corpus.exams());
    assert!(load_corpus(&path, Some(3)).is_err(), "image count mismatch is rejected");
}

#[test]
fn malformed_corpus_lines_are_rejected() {
    let bad = [
        "{\"exam_id\": \"a\"}\n",
        "{\"exam_id\":\"a\",\"images\":[[1.0]],\"tags\":[],\"report\":\"x\",\"split\":\"train\"}\n\
         {\"exam_id\":\"a\",\"images\":[[1.0]],\"tags\":[],\"report\":\"x\",\"split\":\"test\"}\n",
        "{\"exam_id\":\"a\",\"images\":[[1.0],[1.0,2.0]],\"tags\":[],\"report\":\"x\",\"split\":\"train\"}\n",
        "not json\n",
    ];
    for text in bad {
        assert!(parse_corpus(BufReader::new(text.as_bytes()), None).is_err(), "{text}");
    }
}

#[test]
fn synthetic_corpus_is_deterministic() {
    assert_eq!(
        synth_corpus(&small()).unwrap().exams(),
        synth_corpus(&small()).unwrap().exams()
    );
    let other = synth_corpus(&SynthConfig { seed: 14, ..small() }).unwrap();
    assert_ne!(other.exams(), synth_corpus(&small()).unwrap().exams());
}

#[test]
fn checkpoints_reproduce_predictions() {
    let corpus = synth_corpus(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let test: Vec<&Exam> = corpus.split(Split::Test).collect();

    let (ranker, _) = train_binary_head(&corpus, &quick(), 1).unwrap();
    ranker.save(dir.path().join("ranker.json")).unwrap();
    let reloaded = BinaryHead::load(dir.path().join("ranker.json")).unwrap();
    for exam in &test {
        assert_eq!(score_exam(&ranker, exam).unwrap(), score_exam(&reloaded, exam).unwrap());
    }

    let (tagger, _) = train_tag_head(&corpus, &quick(), ThresholdMode::PerTag, 1).unwrap();
    tagger.save(dir.path().join("tagger.json")).unwrap();
    let reloaded = TagHead::load(dir.path().join("tagger.json")).unwrap();
    for exam in &test {
        assert_eq!(
            predict_tags(&tagger, exam).unwrap(),
            predict_tags(&reloaded, exam).unwrap()
        );
    }

    // A checkpoint of one kind cannot be loaded as the other.
    assert!(TagHead::load(dir.path().join("ranker.json")).is_err());
}

#[test]
fn worklist_jsonl_round_trip_preserves_order() {
    let corpus = synth_corpus(&small()).unwrap();
    let (ranker, _) = train_binary_head(&corpus, &quick(), 2).unwrap();
    let test: Vec<&Exam> = corpus.split(Split::Test).collect();
    let worklist = rank_exams(&ranker, &test).unwrap();
    let mut buf = Vec::new();
    worklist.write_jsonl(&mut buf).unwrap();
    let back = RankedWorklist::read_jsonl(BufReader::new(buf.as_slice()), worklist.method.clone()).unwrap();
    assert_eq!(back, worklist);
}

#[test]
fn constrained_retrieval_returns_reports_with_predicted_findings() {
    let corpus = synth_corpus(&SynthConfig { n: 600, ..small() }).unwrap();
    let (tagger, _) = train_tag_head(&corpus, &quick(), ThresholdMode::PerTag, 3).unwrap();
    let index = build_index(corpus.abnormal(Split::Train)).unwrap();
    let lexicon = LabelLexicon::default();
    let mut constrained = 0;
    for exam in corpus.abnormal(Split::Test) {
        let tags = predict_tags(&tagger, exam).unwrap().tags;
        let hit = index.retrieve_1nn_plus(exam, &tags).unwrap();
        let source = corpus.require(&hit.exam_id).unwrap();
        assert_eq!(hit.report, source.report);
        if hit.constrained {
            constrained += 1;
            assert_eq!(source.tags, tags);
            for tag in &tags {
                assert!(hit.report.to_lowercase().contains(tag.as_str()));
            }
        }
        // Every synthetic report labels to at least one outcome.
        assert!(!extract_labels(&hit.report, &lexicon).unwrap().is_empty());
    }
    assert!(constrained > 0);
}
