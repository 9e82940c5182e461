use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ctxscope_core::eval::{self, ConfusionCounts};
use ctxscope_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::commands::detect::{DecisionRecord, InterpretabilityReport, INTERPRETABILITY_FILE};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::files;
use crate::manifest::RunManifest;
use crate::streams;

pub const METRICS_FILE: &str = "metrics.json";

/// Window-level ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowTruth {
    pub stream: String,
    pub window: u64,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Auc {
    Value(f64),
    /// Serialized as the string "undefined".
    Undefined(UndefinedTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UndefinedTag {
    Undefined,
}

impl Auc {
    pub fn value(&self) -> Option<f64> {
        match self {
            Auc::Value(v) => Some(*v),
            Auc::Undefined(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub windows: u64,
    pub positives: u64,
    pub negatives: u64,
    pub confusion: ConfusionCounts,
    pub accuracy: f64,
    pub fpr: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Auc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub detectors: BTreeMap<String, DetectorReport>,
    pub interpretability: Option<InterpretabilityReport>,
    pub warnings: Vec<String>,
}

/// Window truth from labelled telemetry, windowed with the run's pipeline
/// settings.
pub fn truth_from_telemetry(cfg: &RunConfig, path: &Path) -> CliResult<Vec<WindowTruth>> {
    let readings = files::read_telemetry(path)?;
    let period = cfg.calibration.sample_period_ms;
    let layouts = streams::inferred_layouts(&readings, period);
    let windows = streams::window_streams(&readings, &layouts, period, &cfg.pipeline)?;
    Ok(windows
        .iter()
        .flat_map(|sw| {
            sw.windows().map(|w| WindowTruth {
                stream: sw.stream_id.clone(),
                window: w.start_index,
                label: w.truth_label,
            })
        })
        .collect())
}

/// Accepts either telemetry (lines with `ts`) or window truth records.
pub fn read_truth(cfg: &RunConfig, path: &Path) -> CliResult<Vec<WindowTruth>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    let is_telemetry = first
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .is_some_and(|v| v.get("ts").is_some());
    if is_telemetry {
        truth_from_telemetry(cfg, path)
    } else {
        files::read_jsonl(path)
    }
}

pub struct Evaluation {
    pub report: MetricsReport,
    /// Per detector: ROC points.
    pub roc: BTreeMap<String, Vec<(f64, f64)>>,
    /// Per detector: joined rows in input order.
    pub rows: BTreeMap<String, Vec<(DecisionRecord, u8)>>,
}

pub fn evaluate(
    decisions: &[DecisionRecord],
    truth: &[WindowTruth],
    interpretability: Option<InterpretabilityReport>,
) -> CliResult<Evaluation> {
    let mut labels: BTreeMap<(&str, u64), u8> = BTreeMap::new();
    for t in truth {
        labels.insert((t.stream.as_str(), t.window), t.label);
    }
    let mut orphans = Vec::new();
    let mut rows: BTreeMap<String, Vec<(DecisionRecord, u8)>> = BTreeMap::new();
    for d in decisions {
        match labels.get(&(d.stream.as_str(), d.window)) {
            Some(&l) => rows.entry(d.detector.clone()).or_default().push((d.clone(), l)),
            None => orphans.push(format!("{}@{} ({})", d.stream, d.window, d.detector)),
        }
    }
    if !orphans.is_empty() {
        let shown: Vec<&str> = orphans.iter().take(20).map(String::as_str).collect();
        return Err(CliError::Join(format!(
            "{} decision records have no truth: {}{}",
            orphans.len(),
            shown.join(", "),
            if orphans.len() > 20 { ", ..." } else { "" }
        )));
    }

    let mut detectors = BTreeMap::new();
    let mut roc = BTreeMap::new();
    let mut warnings = Vec::new();
    for (name, joined) in &rows {
        let preds: Vec<u8> = joined.iter().map(|(d, _)| d.decision).collect();
        let truths: Vec<u8> = joined.iter().map(|(_, t)| *t).collect();
        let scores: Vec<f64> = joined.iter().map(|(d, _)| d.score).collect();
        let c = eval::confusion(&preds, &truths)?;
        let (precision, recall, f1) = eval::prf1(&c);
        let (accuracy, fpr) = eval::accuracy_fpr(&c);
        let auc = match eval::roc_auc(&scores, &truths) {
            Ok(curve) => {
                roc.insert(name.clone(), curve.points);
                Auc::Value(curve.auc)
            }
            Err(CoreError::Undefined(msg)) => {
                warnings.push(format!("{name}: AUC undefined ({msg})"));
                Auc::Undefined(UndefinedTag::Undefined)
            }
            Err(e) => return Err(e.into()),
        };
        detectors.insert(
            name.clone(),
            DetectorReport {
                windows: c.total(),
                positives: c.tp + c.fn_,
                negatives: c.fp + c.tn,
                confusion: c,
                accuracy,
                fpr,
                precision,
                recall,
                f1,
                auc,
            },
        );
    }
    Ok(Evaluation {
        report: MetricsReport {
            detectors,
            interpretability,
            warnings,
        },
        roc,
        rows,
    })
}

pub fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (x, y) in points {
        let _ = writeln!(s, "{x},{y}");
    }
    s
}

pub fn timeline_csv(rows: &[(DecisionRecord, u8)]) -> String {
    let mut s = String::from("stream,window,ts,score,theta,decision,truth\n");
    for (d, t) in rows {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", d.stream, d.window, d.ts, d.score, d.theta, d.decision, t);
    }
    s
}

pub fn run(
    cfg: &RunConfig,
    decisions_path: &Path,
    truth_path: &Path,
    out_dir: &Path,
) -> CliResult<(PathBuf, Evaluation)> {
    cfg.validate()?;
    let mut manifest = RunManifest::new("evaluate", cfg);
    manifest.input(decisions_path)?;
    manifest.input(truth_path)?;
    let decisions: Vec<DecisionRecord> = files::read_jsonl(decisions_path)?;
    let truth = read_truth(cfg, truth_path)?;
    let interp_path = decisions_path.with_file_name(INTERPRETABILITY_FILE);
    let interpretability = if interp_path.exists() {
        manifest.input(&interp_path)?;
        Some(files::read_json(&interp_path)?)
    } else {
        None
    };
    let ev = manifest.time("evaluate", || evaluate(&decisions, &truth, interpretability))?;
    for w in &ev.report.warnings {
        eprintln!("warning: {w}");
    }
    files::create_dir(out_dir)?;
    let metrics = out_dir.join(METRICS_FILE);
    files::write_json(&metrics, &ev.report)?;
    manifest.output(&metrics)?;
    for (name, points) in &ev.roc {
        let p = out_dir.join(format!("roc_{name}.csv"));
        files::write_text(&p, &roc_csv(points))?;
        manifest.output(&p)?;
    }
    for (name, rows) in &ev.rows {
        let p = out_dir.join(format!("scores_{name}.csv"));
        files::write_text(&p, &timeline_csv(rows))?;
        manifest.output(&p)?;
    }
    manifest.write(out_dir)?;
    Ok((metrics, ev))
}
