//! End-to-end tests of the `triage` binary.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use triage_core::corpus::{load_corpus, synth_corpus, write_corpus, Corpus, Split, SynthConfig};

struct Workspace {
    dir: TempDir,
    data: PathBuf,
    corpus: Corpus,
}

impl Workspace {
    fn new(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(&SynthConfig {
            seed: 5,
            n,
            d: 16,
            ..SynthConfig::default()
        })
        .unwrap();
        let data = dir.path().join("corpus.jsonl");
        write_corpus(&data, &corpus).unwrap();
        Self { dir, data, corpus }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_triage"))
            .arg("--data")
            .arg(&self.data)
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn s(v: &Value, key: &str) -> String {
    v[key]
        .as_str()
        .unwrap_or_else(|| panic!("missing {key} in {v}"))
        .to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes_distinguish_usage_and_runtime_errors() {
    let ws = Workspace::new(100);
    assert_eq!(ws.run(&[]).status.code(), Some(2));
    assert_eq!(ws.run(&["train", "bogus", "--out", "x"]).status.code(), Some(2));
    assert_eq!(ws.run(&["pipeline", "--k", "-3"]).status.code(), Some(2));
    assert_eq!(
        ws.run(&["rank"]).status.code(),
        Some(2),
        "missing --out is a usage error"
    );
    let missing = ws.path("nope.json");
    let out = ws.path("w.jsonl");
    let code = ws
        .run(&["rank", "--model", p(&missing), "--out", p(&out)])
        .status
        .code();
    assert_eq!(code, Some(1));
    assert!(!out.exists());

    let bad = Command::new(env!("CARGO_BIN_EXE_triage"))
        .args(["rank", "--data", "/nonexistent/corpus.jsonl", "--out", p(&out)])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn zero_k_writes_empty_stage_files() {
    let ws = Workspace::new(100);
    let out = ws.path("run");
    ws.ok(&["pipeline", "--k", "0", "--out", p(&out)]);
    assert!(!read_jsonl(&out.join("worklist.jsonl")).is_empty());
    assert!(read_jsonl(&out.join("tags.jsonl")).is_empty());
    assert!(read_jsonl(&out.join("captions.jsonl")).is_empty());
}

#[test]
fn pipeline_outputs_are_consistent() {
    let ws = Workspace::new(100);
    let out = ws.path("run");
    ws.ok(&["pipeline", "--k", "20", "--out", p(&out)]);

    let worklist = read_jsonl(&out.join("worklist.jsonl"));
    let test_ids: HashSet<String> = ws.corpus.split(Split::Test).map(|e| e.exam_id.clone()).collect();
    let ranked: Vec<String> = worklist.iter().map(|v| s(v, "exam_id")).collect();
    assert_eq!(ranked.iter().cloned().collect::<HashSet<_>>(), test_ids);
    assert_eq!(ranked.len(), test_ids.len());
    let scores: Vec<f64> = worklist.iter().map(|v| v["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let tags = read_jsonl(&out.join("tags.jsonl"));
    let captions = read_jsonl(&out.join("captions.jsonl"));
    let k = 20.min(ranked.len());
    let tagged: Vec<String> = tags.iter().map(|v| s(v, "exam_id")).collect();
    assert_eq!(tagged, ranked[..k].to_vec(), "tags follow worklist order");
    let captioned: Vec<String> = captions.iter().map(|v| s(v, "exam_id")).collect();
    assert_eq!(captioned, tagged);
    for t in &tags {
        let set = t["tags"].as_array().unwrap();
        assert!(!set.is_empty(), "every tagged exam gets at least one tag");
        for tag in set {
            assert!(ws.corpus.tag_alphabet().contains(tag.as_str().unwrap()));
        }
    }
}

#[test]
fn retrieved_captions_are_training_reports() {
    let ws = Workspace::new(200);
    let out = ws.path("run");
    ws.ok(&["pipeline", "--k", "30", "--out", p(&out)]);
    let tags: HashMap<String, Value> = read_jsonl(&out.join("tags.jsonl"))
        .into_iter()
        .map(|v| (s(&v, "exam_id"), v["tags"].clone()))
        .collect();
    for c in read_jsonl(&out.join("captions.jsonl")) {
        let source = ws.corpus.require(&s(&c, "source_exam")).unwrap();
        assert_eq!(source.split, Split::Train);
        assert!(source.abnormal());
        assert_eq!(s(&c, "caption"), source.report, "caption is copied verbatim");
        if c["constrained"].as_bool().unwrap() {
            let predicted: HashSet<&str> = tags[&s(&c, "exam_id")]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| t.as_str().unwrap())
                .collect();
            let source_tags: HashSet<&str> = source.tags.iter().map(String::as_str).collect();
            assert_eq!(predicted, source_tags);
        }
    }
}

#[test]
fn saved_ranker_reproduces_scores() {
    let ws = Workspace::new(120);
    let model = ws.path("models/ranker.json");
    ws.ok(&["train", "ranker", "--epochs", "20", "--out", p(&model)]);
    assert!(model.exists());
    let (a, b) = (ws.path("a.jsonl"), ws.path("b.jsonl"));
    ws.ok(&["rank", "--model", p(&model), "--out", p(&a)]);
    ws.ok(&["rank", "--model", p(&model), "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_jsonl(&a).len(), ws.corpus.split(Split::Test).count());
}

#[test]
fn gold_captions_score_perfectly() {
    let ws = Workspace::new(200);
    let worklist = ws.path("worklist.jsonl");
    ws.ok(&["rank", "--out", p(&worklist)]);
    let captions = ws.path("captions.jsonl");
    let lines: Vec<String> = ws
        .corpus
        .abnormal(Split::Test)
        .map(|e| {
            serde_json::json!({
                "exam_id": e.exam_id,
                "caption": e.report,
                "source_exam": null,
                "similarity": null,
                "constrained": false,
            })
            .to_string()
        })
        .collect();
    std::fs::write(&captions, lines.join("\n") + "\n").unwrap();
    let report = ws.path("report.json");
    ws.ok(&[
        "eval",
        "--worklist",
        p(&worklist),
        "--captions",
        p(&captions),
        "--bootstrap-size",
        "20",
        "--bootstrap-samples",
        "50",
        "--out",
        p(&report),
    ]);
    let reports: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let value = |name: &str| {
        reports
            .iter()
            .find(|r| s(r, "metric") == name)
            .unwrap_or_else(|| panic!("no {name} in report"))["value"]
            .as_f64()
            .unwrap()
    };
    assert!((value("bleu") - 100.0).abs() < 1e-9);
    assert!((value("rouge_l") - 1.0).abs() < 1e-12);
    assert!((value("clinical_precision") - 1.0).abs() < 1e-12);
    assert_eq!(value("clinical_precision"), value("clinical_recall"));
}

#[test]
fn eval_report_schema() {
    let ws = Workspace::new(200);
    let out = ws.path("run");
    ws.ok(&["pipeline", "--k", "20", "--out", p(&out)]);
    let report = ws.path("report.json");
    ws.ok(&[
        "eval",
        "--worklist",
        p(&out.join("worklist.jsonl")),
        "--tags",
        p(&out.join("tags.jsonl")),
        "--captions",
        p(&out.join("captions.jsonl")),
        "--bootstrap-size",
        "20",
        "--bootstrap-samples",
        "50",
        "--k",
        "20",
        "--f1-k",
        "20",
        "--out",
        p(&report),
    ]);
    let reports: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let names: Vec<String> = reports.iter().map(|r| s(r, "metric")).collect();
    for want in [
        "ndcg@20",
        "precision@20",
        "macro_f1@20",
        "bleu",
        "rouge_l",
        "clinical_precision",
        "clinical_recall",
    ] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }
    for r in &reports {
        assert!(r["value"].as_f64().unwrap().is_finite());
        if s(r, "metric").starts_with("ndcg") {
            assert!(!r["per_k"].as_object().unwrap().is_empty());
            let boot = &r["bootstrap"];
            assert!(boot.is_object(), "ranking metrics carry a bootstrap summary");
        }
    }

    let too_small = ws.run(&[
        "eval",
        "--worklist",
        p(&out.join("worklist.jsonl")),
        "--out",
        p(&ws.path("r2.json")),
    ]);
    assert_eq!(too_small.status.code(), Some(1), "population below bootstrap size");
    assert!(!ws.path("r2.json").exists());
}

#[test]
fn failed_write_removes_partial_outputs() {
    let ws = Workspace::new(100);
    let out = ws.path("run");
    // A directory where the captions file should go makes the last write fail.
    std::fs::create_dir_all(out.join("captions.jsonl")).unwrap();
    let code = ws.run(&["pipeline", "--k", "10", "--out", p(&out)]).status.code();
    assert_eq!(code, Some(1));
    assert!(!out.join("worklist.jsonl").exists());
    assert!(!out.join("tags.jsonl").exists());
}

#[test]
fn synth_command_writes_loadable_corpus() {
    let ws = Workspace::new(100);
    let out = ws.path("synth.jsonl");
    let status = Command::new(env!("CARGO_BIN_EXE_triage"))
        .args(["synth", "--n", "50", "--d", "8", "--seed", "3", "--out", p(&out)])
        .output()
        .unwrap();
    assert!(status.status.success());
    let corpus = load_corpus(&out, Some(2)).unwrap();
    assert_eq!(corpus.len(), 50);
    assert_eq!(corpus.embedding_dim(), 16);
}
