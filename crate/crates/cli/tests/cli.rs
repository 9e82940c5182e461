use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctxscope::artifact::ModelArtifact;
use ctxscope::commands::bench::BenchReport;
use ctxscope::commands::detect::DecisionRecord;
use ctxscope::commands::evaluate::{MetricsReport, WindowTruth};
use serde_json::Value;
use tempfile::TempDir;

fn ctxscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxscope"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = ctxscope(args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn jsonl<T: serde::de::DeserializeOwned>(p: &Path) -> Vec<T> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn to_jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).unwrap() + "\n").collect()
}

/// One clean smart-grid stream, simulated into `dir`.
fn clean(dir: &Path, duration_s: u64, seed: u64) {
    ok(&[
        "--out-dir",
        s(dir),
        "--seed",
        &seed.to_string(),
        "--streams",
        "1",
        "--duration-s",
        &duration_s.to_string(),
        "simulate",
    ]);
}

#[test]
fn simulate_is_deterministic() {
    let t = TempDir::new().unwrap();
    let cfg = write(
        t.path(),
        "run.toml",
        "seed = 11\n[scenario]\nstreams = 2\nduration_s = 3600\n[events.plan]\nper_stream = 2\nkinds = [\"spike\", \"stuck\"]\nmagnitude = [5.0, 6.0]\nduration = [3, 5]\nwarmup_s = 600\n",
    );
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        ok(&["--config", s(&cfg), "--out-dir", s(d), "simulate"]);
    }
    for f in ["telemetry.jsonl", "events.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: Value = serde_json::from_slice(&fs::read(a.join("simulate.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn fifty_seconds_of_one_stream_is_twenty_lines() {
    let t = TempDir::new().unwrap();
    ok(&[
        "--out-dir",
        s(t.path()),
        "--kind",
        "smartgrid",
        "--streams",
        "1",
        "--duration-s",
        "50",
        "simulate",
    ]);
    let text = fs::read_to_string(t.path().join("telemetry.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 20);
    assert!(text.lines().all(|l| l.contains("\"label\":0")), "{text}");
}

#[test]
fn unknown_scenario_kind_is_a_config_error() {
    let t = TempDir::new().unwrap();
    let cfg = write(t.path(), "bad.toml", "[scenario]\nkind = \"factory\"\n");
    let o = ctxscope(&["--config", s(&cfg), "--out-dir", s(t.path()), "simulate"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("kind"), "{}", stderr(&o));
    let o = ctxscope(&["--kind", "factory", "--out-dir", s(t.path()), "simulate"]);
    assert_eq!(code(&o), 2);
    assert!(!t.path().join("telemetry.jsonl").exists());
}

#[test]
fn invalid_values_name_the_field() {
    let t = TempDir::new().unwrap();
    let o = ctxscope(&["--out-dir", s(t.path()), "--quantile", "1.5", "simulate"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("quantile"), "{}", stderr(&o));
    let o = ctxscope(&["--out-dir", s(t.path()), "--input", "/nonexistent/t.jsonl", "calibrate"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("input"), "{}", stderr(&o));
}

#[test]
fn calibration_is_reproducible_and_round_trips() {
    let t = TempDir::new().unwrap();
    clean(t.path(), 3600, 3);
    let input = t.path().join("telemetry.jsonl");
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        ok(&["--seed", "3", "--input", s(&input), "--out-dir", s(d), "calibrate"]);
    }
    let bytes = fs::read(a.join("model.json")).unwrap();
    assert_eq!(bytes, fs::read(b.join("model.json")).unwrap());

    let loaded = ModelArtifact::load(&a.join("model.json")).unwrap();
    let again = t.path().join("again.json");
    loaded.save(&again).unwrap();
    assert_eq!(fs::read(&again).unwrap(), bytes);
    let reloaded = ModelArtifact::load(&again).unwrap();
    assert_eq!(reloaded, loaded);
    let m = &reloaded.streams["smartgrid-000"];
    let l = &loaded.streams["smartgrid-000"];
    for (x, y) in m.baseline.sigma.data.iter().zip(&l.baseline.sigma.data) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn one_window_is_a_calibration_error() {
    let t = TempDir::new().unwrap();
    // 12 samples at 5 s: exactly one window of 12
    clean(t.path(), 60, 1);
    let o = ctxscope(&["--out-dir", s(t.path()), "calibrate"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("17"), "minimum not named: {}", stderr(&o));
    assert!(!t.path().join("model.json").exists());
}

fn decisions(dir: &Path, detector: &str) -> Vec<DecisionRecord> {
    jsonl::<DecisionRecord>(&dir.join("decisions.jsonl"))
        .into_iter()
        .filter(|d| d.detector == detector)
        .collect()
}

#[test]
fn clean_replay_flags_at_most_twice_the_tail() {
    let t = TempDir::new().unwrap();
    clean(t.path(), 3600, 21);
    ok(&["--out-dir", s(t.path()), "calibrate"]);
    ok(&["--out-dir", s(t.path()), "detect"]);
    for det in ["mahalanobis", "residual"] {
        let d = decisions(t.path(), det);
        assert_eq!(d.len(), 720 - 11);
        let flagged = d.iter().filter(|r| r.decision == 1).count();
        assert!(
            flagged as f64 / d.len() as f64 <= 2.0 * (1.0 - 0.995),
            "{det}: {flagged}/{}",
            d.len()
        );
    }
    // one explanation per flagged window of the configured scorer
    let flagged = decisions(t.path(), "mahalanobis").iter().filter(|r| r.decision == 1).count();
    let ex: Vec<Value> = jsonl(&t.path().join("explanations.jsonl"));
    assert_eq!(ex.len(), flagged);
}

#[test]
fn spike_windows_outscore_the_clean_median() {
    let t = TempDir::new().unwrap();
    let cfg = write(
        t.path(),
        "spike.toml",
        r#"seed = 5
[scenario]
streams = 1
duration_s = 3600

[[events.list]]
kind = "spike"
stream_id = "smartgrid-000"
channels = ["voltage"]
start_index = 500
duration = 4
magnitude = 5.0

[calibration]
warmup_s = 1800
"#,
    );
    for c in ["simulate", "calibrate", "detect"] {
        ok(&["--config", s(&cfg), "--out-dir", s(t.path()), c]);
    }
    let d = decisions(t.path(), "mahalanobis");
    let mut clean: Vec<f64> = d
        .iter()
        .filter(|r| r.window + 12 <= 500 || r.window >= 504)
        .map(|r| r.score)
        .collect();
    clean.sort_by(f64::total_cmp);
    let median = clean[clean.len() / 2];
    let spiked: Vec<&DecisionRecord> = d.iter().filter(|r| r.window + 12 > 500 && r.window < 504).collect();
    assert_eq!(spiked.len(), 15);
    for r in spiked {
        assert!(r.score > median, "window {}: {} vs median {median}", r.window, r.score);
    }
}

#[test]
fn empty_telemetry_gives_empty_outputs() {
    let t = TempDir::new().unwrap();
    clean(t.path(), 3600, 2);
    ok(&["--out-dir", s(t.path()), "calibrate"]);
    let empty = write(t.path(), "empty.jsonl", "");
    let out = t.path().join("out");
    ok(&["--out-dir", s(&out), "--model", s(&t.path().join("model.json")), "--input", s(&empty), "detect"]);
    assert_eq!(fs::read_to_string(out.join("decisions.jsonl")).unwrap(), "");
    assert_eq!(fs::read_to_string(out.join("explanations.jsonl")).unwrap(), "");
}

#[test]
fn schema_mismatch_is_exit_four() {
    let t = TempDir::new().unwrap();
    clean(t.path(), 3600, 4);
    ok(&["--out-dir", s(t.path()), "calibrate"]);
    let hc = t.path().join("hc");
    ok(&["--out-dir", s(&hc), "--kind", "healthcare", "--streams", "1", "--duration-s", "600", "simulate"]);
    let o = ctxscope(&[
        "--out-dir",
        s(&hc),
        "--model",
        s(&t.path().join("model.json")),
        "--input",
        s(&hc.join("telemetry.jsonl")),
        "detect",
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(!hc.join("decisions.jsonl").exists());
}

#[test]
fn malformed_lines_are_reported_by_number() {
    let t = TempDir::new().unwrap();
    clean(t.path(), 600, 6);
    let good = fs::read_to_string(t.path().join("telemetry.jsonl")).unwrap();
    let mut lines: Vec<&str> = good.lines().collect();
    lines[2] = "{\"stream\": \"smartgrid-000\", \"ts\": ";
    lines[6] = "not json";
    let bad = write(t.path(), "bad.jsonl", &(lines.join("\n") + "\n"));
    let out = t.path().join("out");
    let o = ctxscope(&["--out-dir", s(&out), "--input", s(&bad), "calibrate"]);
    assert_eq!(code(&o), 4);
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("line 7"), "{err}");
    assert!(!out.join("model.json").exists());

    let dec = write(t.path(), "dec.jsonl", "{\"stream\":\"a\",\"window\":0}\n");
    let o = ctxscope(&["--out-dir", s(&out), "--input", s(&bad), "evaluate", "--decisions", s(&dec)]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
    assert!(!out.join("metrics.json").exists());
}

fn decision(stream: &str, window: u64, detector: &str, score: f64, decision: u8) -> DecisionRecord {
    DecisionRecord {
        stream: stream.into(),
        window,
        ts: window * 5000,
        detector: detector.into(),
        score,
        theta: 0.5,
        decision,
    }
}

fn truth(stream: &str, window: u64, label: u8) -> WindowTruth {
    WindowTruth {
        stream: stream.into(),
        window,
        label,
    }
}

fn evaluate(dir: &Path, decisions: &[DecisionRecord], truths: &[WindowTruth]) -> Output {
    let d = write(dir, "decisions.jsonl", &to_jsonl(decisions));
    let t = write(dir, "truth.jsonl", &to_jsonl(truths));
    ctxscope(&["--out-dir", s(dir), "evaluate", "--decisions", s(&d), "--truth", s(&t)])
}

fn metrics(dir: &Path) -> MetricsReport {
    serde_json::from_slice(&fs::read(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn decisions_equal_to_truth_have_accuracy_one() {
    let t = TempDir::new().unwrap();
    let labels = [0u8, 1, 0, 0, 1, 1, 0];
    let truths: Vec<WindowTruth> = labels.iter().enumerate().map(|(i, &l)| truth("s", i as u64, l)).collect();
    let decs: Vec<DecisionRecord> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| decision("s", i as u64, "mahalanobis", f64::from(l), l))
        .collect();
    assert_eq!(code(&evaluate(t.path(), &decs, &truths)), 0);
    let r = &metrics(t.path()).detectors["mahalanobis"];
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.fpr, 0.0);
    assert_eq!(r.auc.value(), Some(1.0));
    let roc = fs::read_to_string(t.path().join("roc_mahalanobis.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr\n0,0\n") && roc.ends_with("1,1\n"), "{roc}");
    let timeline = fs::read_to_string(t.path().join("scores_mahalanobis.csv")).unwrap();
    assert_eq!(timeline.lines().count(), labels.len() + 1);
}

#[test]
fn hand_built_confusion_matches_the_tally() {
    let t = TempDir::new().unwrap();
    // (prediction, truth): TP=3, FP=1, TN=4, FN=1
    let pairs = [(1, 1), (1, 1), (1, 1), (1, 0), (0, 0), (0, 0), (0, 0), (0, 0), (0, 1)];
    let truths: Vec<WindowTruth> = pairs.iter().enumerate().map(|(i, p)| truth("s", i as u64, p.1)).collect();
    let decs: Vec<DecisionRecord> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| decision("s", i as u64, "rules", i as f64, p.0))
        .collect();
    assert_eq!(code(&evaluate(t.path(), &decs, &truths)), 0);
    let r = &metrics(t.path()).detectors["rules"];
    let c = &r.confusion;
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (3, 1, 4, 1));
    assert_eq!(r.precision, 0.75);
    assert_eq!(r.recall, 0.75);
    assert_eq!(r.f1, 0.75);
    assert_eq!(r.accuracy, 7.0 / 9.0);
    assert_eq!(r.fpr, 0.2);
    assert_eq!((r.windows, r.positives, r.negatives), (9, 4, 5));
}

#[test]
fn single_class_truth_leaves_auc_undefined() {
    let t = TempDir::new().unwrap();
    let truths: Vec<WindowTruth> = (0..5).map(|i| truth("s", i, 0)).collect();
    let decs: Vec<DecisionRecord> = (0..5).map(|i| decision("s", i, "mahalanobis", i as f64, 0)).collect();
    let o = evaluate(t.path(), &decs, &truths);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
    let raw: Value = serde_json::from_slice(&fs::read(t.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(raw["detectors"]["mahalanobis"]["auc"], "undefined");
    assert!(!t.path().join("roc_mahalanobis.csv").exists());
}

#[test]
fn orphan_decisions_are_a_join_error() {
    let t = TempDir::new().unwrap();
    let truths = vec![truth("s", 0, 0), truth("s", 1, 1)];
    let decs = vec![
        decision("s", 0, "mahalanobis", 0.1, 0),
        decision("s", 7, "mahalanobis", 0.9, 1),
        decision("other", 1, "mahalanobis", 0.9, 1),
    ];
    let o = evaluate(t.path(), &decs, &truths);
    assert_eq!(code(&o), 5);
    let err = stderr(&o);
    assert!(err.contains("s@7") && err.contains("other@1"), "{err}");
    assert!(!t.path().join("metrics.json").exists());
}

#[test]
fn evaluate_joins_detect_output_with_labelled_telemetry() {
    let t = TempDir::new().unwrap();
    let cfg = write(
        t.path(),
        "run.toml",
        "seed = 9\n[scenario]\nstreams = 2\nduration_s = 3600\n[events.plan]\nper_stream = 2\nkinds = [\"spike\"]\nmagnitude = [6.0, 8.0]\nduration = [3, 5]\nwarmup_s = 1800\n[calibration]\nwarmup_s = 1800\n[detect]\nemit_from_s = 1800\n",
    );
    for c in ["simulate", "calibrate", "detect", "evaluate"] {
        ok(&["--config", s(&cfg), "--out-dir", s(t.path()), c]);
    }
    let m = metrics(t.path());
    assert_eq!(m.detectors.len(), 3);
    let n = m.detectors["rules"].windows;
    assert!(m.detectors.values().all(|r| r.windows == n));
    assert!(m.detectors["mahalanobis"].positives > 0);
    assert!(m.interpretability.is_some());
}

fn bench(dir: &Path, streams: usize, windows: usize) -> BenchReport {
    ok(&[
        "--out-dir",
        s(dir),
        "--bench-streams",
        &streams.to_string(),
        "--bench-windows",
        &windows.to_string(),
        "bench",
    ]);
    serde_json::from_slice(&fs::read(dir.join("bench.json")).unwrap()).unwrap()
}

#[test]
fn single_stream_single_window_bench_has_one_sample() {
    let t = TempDir::new().unwrap();
    let r = bench(t.path(), 1, 1);
    assert_eq!(r.tiers.len(), 1);
    assert_eq!(r.tiers[0].total_windows, 1);
    assert_eq!(r.tiers[0].latency_ns.count, 1);
    let l = &r.tiers[0].latency_ns;
    assert!(l.p50 == l.p99 && l.p50 == l.mean);
}

#[test]
fn doubling_windows_doubles_the_total() {
    let t = TempDir::new().unwrap();
    let a = bench(&t.path().join("a"), 20, 5);
    let b = bench(&t.path().join("b"), 20, 10);
    assert_eq!(a.tiers.len(), b.tiers.len());
    for (x, y) in a.tiers.iter().zip(&b.tiers) {
        assert_eq!(2 * x.total_windows, y.total_windows);
        assert_eq!(y.latency_ns.count, y.total_windows);
    }
    assert_eq!(2 * a.total_windows, b.total_windows);
}

#[test]
fn explain_dump_exports_a_chosen_window() {
    let t = TempDir::new().unwrap();
    clean(t.path(), 3600, 12);
    ok(&["--out-dir", s(t.path()), "calibrate"]);
    ok(&["--out-dir", s(t.path()), "explain-dump", "--stream", "smartgrid-000", "--window", "400"]);
    let dump: Vec<Value> = jsonl(&t.path().join("explain_dump.jsonl"));
    assert_eq!(dump.len(), 1);
    assert_eq!(dump[0]["channels"], serde_json::json!(["voltage", "current"]));
    let rows = dump[0]["attribution"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.as_array().unwrap().len() == 12));
}
