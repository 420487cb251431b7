use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use srvf_core::domain::{load_samples, LabelSet};
use srvf_core::eval::synthetic::{default_bias, sentence_corpus};
use srvf_core::eval::{run_benchmark_on, BenchConfig, EvalReport, Method, MethodStatus};
use srvf_core::llm::MockBackend;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn srvf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srvf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A small training file: the first two fixture samples of every label.
fn small_train(dir: &Path) -> PathBuf {
    let labels = LabelSet::semeval();
    let all = load_samples(&fixtures().join("train.jsonl"), &labels).unwrap();
    let mut picked = Vec::new();
    for l in labels.iter() {
        picked.extend(all.iter().filter(|s| s.gold == *l).take(2).cloned());
    }
    let path = dir.join("small.jsonl");
    srvf_core::domain::save_samples(&path, &picked).unwrap();
    path
}

#[test]
fn usage_errors_exit_one() {
    let o = srvf(&["run", "--test", "t", "--store", "s", "--data", "d", "--out", "o"]);
    assert_eq!(code(&o), 1, "missing --model");
    assert!(String::from_utf8_lossy(&o.stderr).contains("--model"));
    assert_eq!(code(&srvf(&["frobnicate"])), 1);
    assert_eq!(code(&srvf(&["--help"])), 0);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let o = srvf(&[
        "collect",
        "--data",
        s(&missing),
        "--out",
        s(&dir.path().join("r.jsonl")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));

    let data = fixtures().join("train.jsonl");
    let o = srvf(&["sample-kshot", "--data", s(&data), "--k", "3", "--out", s(&data)]);
    assert_eq!(code(&o), 2, "output may not overwrite an input");

    let o = srvf(&["--endpoint", "http://localhost:1", "--print-config", "bench"]);
    assert_eq!(code(&o), 2, "http flags with the mock backend");
}

#[test]
fn collect_then_train_writes_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_train(dir.path());
    let store = dir.path().join("rationales.jsonl");
    let model = dir.path().join("model.json");
    let o = srvf(&["collect", "--data", s(&data), "--out", s(&store)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&store).unwrap().lines().count() > 0);

    let o = srvf(&[
        "train",
        "--rationales",
        s(&store),
        "--data",
        s(&data),
        "--out",
        s(&model),
        "--epochs",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let checkpoint = json(&model);
    assert!(checkpoint.is_object());

    let preds = dir.path().join("preds.jsonl");
    let o = srvf(&[
        "run",
        "--test",
        s(&data),
        "--model",
        s(&model),
        "--store",
        s(&store),
        "--data",
        s(&data),
        "--out",
        s(&preds),
        "--max-iters",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for line in std::fs::read_to_string(&preds).unwrap().lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["llm_calls"].as_u64().unwrap() <= 3);
    }

    let o = srvf(&["eval", "--pred", s(&preds), "--gold", s(&data), "--negatives", "Other"]);
    assert_eq!(code(&o), 0);
    let scores: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(scores["evaluated"], 20);
    let f1 = scores["micro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
}

#[test]
fn print_config_applies_flags_over_file() {
    let o = srvf(&[
        "--config",
        s(&fixtures().join("bench.json")),
        "--seed",
        "11",
        "--print-config",
        "bench",
        "--methods",
        "icl",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(cfg["seed"], 11);
    assert_eq!(cfg["methods"], serde_json::json!(["icl"]));
    assert_eq!(cfg["self_consistency_n"], 5);
    assert_eq!(cfg["max_inflight"], 8);
    assert_eq!(cfg["train"].as_str().unwrap(), s(&fixtures().join("train.jsonl")));
}

#[test]
fn sample_kshot_draws_k_per_label() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.jsonl");
    let o = srvf(&[
        "sample-kshot",
        "--data",
        s(&fixtures().join("train.jsonl")),
        "--k",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
    let labels = LabelSet::semeval();
    let drawn = load_samples(&out, &labels).unwrap();
    for l in labels.iter() {
        assert_eq!(drawn.iter().filter(|s| s.gold == *l).count(), 4);
    }
}

#[test]
fn bench_matches_library_and_reruns_identically() {
    let corpus = sentence_corpus(20, 50, 0);
    let labels = LabelSet::semeval();
    assert_eq!(
        load_samples(&fixtures().join("train.jsonl"), &labels).unwrap(),
        corpus.train
    );
    assert_eq!(
        load_samples(&fixtures().join("test.jsonl"), &labels).unwrap(),
        corpus.test
    );

    let dir = tempfile::tempdir().unwrap();
    let config = fixtures().join("bench.json");
    let runs: Vec<PathBuf> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = srvf(&["--config", s(&config), "bench", "--out-dir", s(&out)]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();

    let mut files: Vec<String> = std::fs::read_dir(&runs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "timing.json")
        .collect();
    files.sort();
    assert_eq!(files.len(), 7);
    for f in &files {
        let a = std::fs::read(runs[0].join(f)).unwrap();
        let b = std::fs::read(runs[1].join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }

    let cli: EvalReport = serde_json::from_value(json(&runs[0].join("report.json"))).unwrap();
    let bench = BenchConfig {
        seed: 0,
        ..BenchConfig::default()
    };
    let mock = MockBackend::new(default_bias(), labels.clone())
        .unwrap()
        .with_samples(corpus.train.iter().chain(&corpus.test));
    let lib = run_benchmark_on(&bench, &labels, &corpus.train, &corpus.test, &mock).unwrap();
    assert_eq!(cli, lib.report);

    let f1 = |m| cli.method(m).unwrap().micro_f1.unwrap();
    assert!(cli.methods.iter().all(|m| m.status == MethodStatus::Ok));
    assert!(f1(Method::Srvf) - f1(Method::Icl) >= 0.05);
}
