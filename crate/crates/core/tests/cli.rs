//! Runs the `haldetect` binary end to end on small synthetic corpora.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use haldetect::corpus::{load_corpus, save_corpus, RagRecord, Split};
use haldetect::detector::RecordPrediction;
use haldetect::metrics::{Level, Slice, SlicedReport};
use haldetect::synthetic::{generate, SyntheticConfig};
use tempfile::TempDir;

fn haldetect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_haldetect"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &TempDir, name: &str, records: &[RagRecord]) -> PathBuf {
    let path = dir.path().join(name);
    save_corpus(records, &path).unwrap();
    path
}

fn synthetic(records: usize, seed: u64) -> Vec<RagRecord> {
    generate(&SyntheticConfig { records, seed, ..SyntheticConfig::default() })
}

fn read_report(dir: &Path) -> SlicedReport {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn whole_token_f1(report: &SlicedReport) -> Option<f64> {
    report.get(Level::Token, Slice::Whole).and_then(|r| r.class_1.f1.value())
}

fn perfect_predictions(records: &[RagRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| {
            let tokens: Vec<_> = (0..r.answer_len())
                .map(|i| {
                    let hit = r.labels.iter().any(|l| l.start <= i && i < l.end);
                    serde_json::json!({"start": i, "end": i + 1, "prob": if hit { 0.9 } else { 0.1 }})
                })
                .collect();
            serde_json::json!({"id": r.id, "spans": [], "tokens": tokens}).to_string()
        })
        .collect()
}

#[test]
fn identity_translate_changes_only_language() {
    let dir = TempDir::new().unwrap();
    let records = synthetic(12, 1);
    let input = corpus(&dir, "in.jsonl", &records);
    let out = dir.path().join("out.jsonl");
    let run = haldetect(&["translate", s(&input), "--target-lang", "de", "--out", s(&out), "--parallelism", "4"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert!(String::from_utf8_lossy(&run.stdout).contains("12 translated"));
    let back = load_corpus(&out).unwrap();
    assert_eq!(back.len(), records.len());
    for (a, b) in records.iter().zip(&back) {
        assert_eq!(b.language, "de");
        assert_eq!(RagRecord { language: a.language.clone(), ..b.clone() }, a.normalized());
    }
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let run = haldetect(&["translate", "/nonexistent/in.jsonl", "--target-lang", "de", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).lines().any(|l| l.starts_with("error: kind=")), "{}", stderr(&run));

    let run = haldetect(&["evaluate"]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("error: kind=usage"));
}

#[test]
fn corrupting_backend_is_partial_success() {
    let dir = TempDir::new().unwrap();
    let records = synthetic(8, 2);
    let with_spans = records.iter().filter(|r| !r.labels.is_empty()).count();
    assert!(with_spans > 0 && with_spans < records.len());
    let input = corpus(&dir, "in.jsonl", &records);
    let out = dir.path().join("out.jsonl");
    // dropping every closing marker breaks any answer that had spans
    let run = haldetect(&[
        "translate",
        s(&input),
        "--target-lang",
        "de",
        "--backend",
        "command",
        "--command",
        "sed s|</HAL>||g",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&run), 2, "{}", stderr(&run));
    assert!(stderr(&run).contains("error: kind="));
    assert_eq!(load_corpus(&out).unwrap().len(), records.len() - with_spans);
    let failures = fs::read_to_string(dir.path().join("out.jsonl.failures.jsonl")).unwrap();
    assert_eq!(failures.lines().count(), with_spans);
}

#[test]
fn build_labels_handles_empty_and_overlong_input() {
    let dir = TempDir::new().unwrap();
    let records = synthetic(6, 3);
    let input = corpus(&dir, "in.jsonl", &records);
    let tok = dir.path().join("tok.json");
    assert_eq!(code(&haldetect(&["fit-tokenizer", s(&input), "--out", s(&tok)])), 0);

    let empty = corpus(&dir, "empty.jsonl", &[]);
    let labels = dir.path().join("empty.labels.jsonl");
    let run = haldetect(&["build-labels", s(&empty), "--tokenizer", s(&tok), "--out", s(&labels)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert_eq!(fs::read_to_string(&labels).unwrap(), "");

    let mut long = records.clone();
    long[2].answer = std::iter::repeat_n("supported", 80).collect::<Vec<_>>().join(" ");
    long[2].labels.clear();
    let input = corpus(&dir, "long.jsonl", &long);
    let labels = dir.path().join("long.labels.jsonl");
    let run = haldetect(&["build-labels", s(&input), "--tokenizer", s(&tok), "--max-len", "48", "--out", s(&labels)]);
    assert_eq!(code(&run), 2, "{}", stderr(&run));
    assert!(stderr(&run).contains(&long[2].id));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("long.labels.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["unencodable"], serde_json::json!([long[2].id]));
    assert_eq!(manifest["written"], serde_json::json!(long.len() - 1));
}

#[test]
fn evaluate_perfect_predictions_and_id_mismatch() {
    let dir = TempDir::new().unwrap();
    let records = synthetic(16, 4);
    let gold = corpus(&dir, "gold.jsonl", &records);
    let preds = dir.path().join("pred.jsonl");
    fs::write(&preds, perfect_predictions(&records).join("\n") + "\n").unwrap();
    let report_dir = dir.path().join("report");
    let run = haldetect(&["evaluate", s(&gold), s(&preds), "--report-dir", s(&report_dir)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let report = read_report(&report_dir);
    assert_eq!(whole_token_f1(&report), Some(1.0));
    for r in report.reports.iter().filter(|r| r.class_1.support > 0) {
        assert_eq!(r.class_1.f1.value(), Some(1.0), "{:?} {:?}", r.level, r.slice);
    }
    assert!(fs::read_to_string(report_dir.join("report.csv")).unwrap().starts_with("level,slice,"));

    let mut lines = perfect_predictions(&records);
    lines[3] = lines[3].replace(&records[3].id, "no-such-record");
    fs::write(&preds, lines.join("\n") + "\n").unwrap();
    let run = haldetect(&["evaluate", s(&gold), s(&preds), "--report-dir", s(&report_dir)]);
    assert_eq!(code(&run), 4, "{}", stderr(&run));
    assert!(stderr(&run).contains("error: kind=artifact_mismatch"));
}

#[test]
fn train_rejects_labels_from_another_tokenizer() {
    let dir = TempDir::new().unwrap();
    let records = synthetic(6, 5);
    let input = corpus(&dir, "in.jsonl", &records);
    let tok_a = dir.path().join("a.json");
    let tok_b = dir.path().join("b.json");
    assert_eq!(code(&haldetect(&["fit-tokenizer", s(&input), "--out", s(&tok_a)])), 0);
    assert_eq!(code(&haldetect(&["fit-tokenizer", s(&input), "--out", s(&tok_b), "--lowercase"])), 0);
    let labels = dir.path().join("labels.jsonl");
    assert_eq!(code(&haldetect(&["build-labels", s(&input), "--tokenizer", s(&tok_a), "--out", s(&labels)])), 0);
    let run = haldetect(&["train", s(&labels), "--tokenizer", s(&tok_b), "--model-dir", s(&dir.path().join("m"))]);
    assert_eq!(code(&run), 4, "{}", stderr(&run));
    assert!(stderr(&run).contains("error: kind=artifact_mismatch"));
}

#[test]
fn full_pipeline_learns_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let records = synthetic(60, 6);
    let (train_set, _): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| r.split == Split::Train);
    let train_in = corpus(&dir, "train.jsonl", &train_set);
    let tok = dir.path().join("tok.json");
    assert_eq!(code(&haldetect(&["fit-tokenizer", s(&train_in), "--out", s(&tok)])), 0);

    let labels = |name: &str| {
        let out = dir.path().join(name);
        let run = haldetect(&["build-labels", s(&train_in), "--tokenizer", s(&tok), "--max-len", "128", "--out", s(&out)]);
        assert_eq!(code(&run), 0, "{}", stderr(&run));
        fs::read(out).unwrap()
    };
    let first = labels("labels.jsonl");
    assert_eq!(first, labels("labels2.jsonl"));

    let config = dir.path().join("train.toml");
    fs::write(
        &config,
        "[train]\nepochs = 40\nlearning_rate = 3e-3\nbatch_size = 4\nmax_len = 128\nseed = 7\n\n\
         [encoder]\nhidden_size = 32\nnum_layers = 1\nnum_heads = 2\nintermediate_size = 64\n",
    )
    .unwrap();
    let model_dir = dir.path().join("model");
    let run = haldetect(&[
        "train",
        s(&dir.path().join("labels.jsonl")),
        "--tokenizer",
        s(&tok),
        "--config",
        s(&config),
        "--model-dir",
        s(&model_dir),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    for f in ["manifest.json", "model.safetensors", "tokenizer.json", "training.json"] {
        assert!(model_dir.join(f).exists(), "{f}");
    }

    let preds = dir.path().join("pred.jsonl");
    let run = haldetect(&["predict", s(&train_in), "--model-dir", s(&model_dir), "--out", s(&preds)]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let lines = fs::read_to_string(&preds).unwrap();
    let parsed: Vec<RecordPrediction> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed.iter().map(|p| &p.id).collect::<Vec<_>>(), train_set.iter().map(|r| &r.id).collect::<Vec<_>>());

    let evaluate = |name: &str| {
        let out = dir.path().join(name);
        let run = haldetect(&["evaluate", s(&train_in), s(&preds), "--report-dir", s(&out), "--model-dir", s(&model_dir)]);
        assert_eq!(code(&run), 0, "{}", stderr(&run));
        out
    };
    let a = evaluate("ra");
    let b = evaluate("rb");
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    assert_eq!(fs::read(a.join("report.csv")).unwrap(), fs::read(b.join("report.csv")).unwrap());

    let report = read_report(&a);
    let f1 = whole_token_f1(&report).unwrap();
    assert!(f1 >= 0.95, "training-set token F1 {f1}");
    assert_eq!(report.reports[0].model_manifest_version.as_deref(), Some("toy-encoder/v1/seed7"));
}
