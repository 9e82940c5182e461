use std::path::{Path, PathBuf};
use std::time::Instant;

use ctxscope_core::detector;
use ctxscope_core::eval::{self, LatencyStats};
use ctxscope_core::explain::{self, ExplanationRecord, ScoringContext};
use ctxscope_core::pipeline::{self, ScorerKind, StreamState};
use ctxscope_core::telemetry::SensorReading;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::ModelArtifact;
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::files;
use crate::manifest::RunManifest;
use crate::streams::{self, StreamWindows};

pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const EXPLANATIONS_FILE: &str = "explanations.jsonl";
pub const INTERPRETABILITY_FILE: &str = "interpretability.json";
pub const LATENCY_FILE: &str = "latency.json";

pub const DETECTOR_RULES: &str = "rules";

/// One detector's verdict on one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub stream: String,
    /// Window start index (grid slot).
    pub window: u64,
    pub ts: u64,
    pub detector: String,
    pub score: f64,
    pub theta: f64,
    pub decision: u8,
}

/// Interpretability proxies over every reported window, for the configured
/// contextual scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretabilityReport {
    pub scorer: ScorerKind,
    pub windows: usize,
    pub attention_entropy_norm: Option<f64>,
    pub attribution_concentration: Option<f64>,
    pub singular_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Per-window time of the scoring path (window → both contextual scores
    /// and the rule verdict), nanoseconds.
    pub scoring_ns: Option<LatencyStats>,
}

#[derive(Debug, Default)]
pub struct StreamDetection {
    pub decisions: Vec<DecisionRecord>,
    pub explanations: Vec<ExplanationRecord>,
    pub latency_ns: Vec<f64>,
    entropy: Vec<f64>,
    concentration: Vec<f64>,
    singular: usize,
}

pub struct Detection {
    pub decisions: Vec<DecisionRecord>,
    pub explanations: Vec<ExplanationRecord>,
    pub latency_ns: Vec<f64>,
    pub interpretability: InterpretabilityReport,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn detect_stream(
    sw: &StreamWindows,
    artifact: &ModelArtifact,
    scorer: ScorerKind,
    emit_from_s: Option<u64>,
    top_k: usize,
) -> CliResult<StreamDetection> {
    let model = artifact.resolve(&sw.stream_id, &sw.channels)?;
    let enc = &artifact.encoder;
    let cfg = &artifact.pipeline;
    let emit_from = emit_from_s.map_or(0, |s| sw.slot_after(s));
    let mut out = StreamDetection::default();
    for segment in &sw.segments {
        // memory does not carry across gaps
        let mut state = StreamState::new(enc);
        for raw in segment {
            let t0 = Instant::now();
            let fwd = state.advance(raw, enc, model, cfg)?;
            let rules = pipeline::rule_verdict(raw, model)?;
            let elapsed = t0.elapsed().as_nanos() as f64;
            if raw.start_index < emit_from {
                continue;
            }
            out.latency_ns.push(elapsed);
            let ts = sw.ts_of(raw.start_index);
            let mut record = |detector: &str, score: f64, theta: f64, decision: u8| {
                out.decisions.push(DecisionRecord {
                    stream: sw.stream_id.clone(),
                    window: raw.start_index,
                    ts,
                    detector: detector.to_string(),
                    score,
                    theta,
                    decision,
                })
            };
            for kind in [ScorerKind::Mahalanobis, ScorerKind::Residual] {
                let (s, th) = (fwd.score(kind), model.theta(kind));
                record(kind.as_str(), s, th, detector::decide(s, th));
            }
            record(DETECTOR_RULES, rules.score, 1.0, rules.label);

            let sc = ScoringContext {
                encoder: enc,
                model,
                cfg,
                context: &fwd.step.context,
                prev_attended: None,
            };
            let attribution = explain::attribute(raw, &fwd, &sc, scorer)?;
            out.entropy.push(explain::attention_entropy_norm(&fwd.step.attention));
            out.concentration.push(explain::attribution_concentration(&attribution.values));
            out.singular += usize::from(attribution.singular);
            let (score, theta) = (fwd.score(scorer), model.theta(scorer));
            if detector::decide(score, theta) == 1 {
                out.explanations.push(explain::render_explanation(
                    &attribution,
                    &model.channels,
                    &fwd.step.attention,
                    score,
                    theta,
                    1,
                    ts,
                    top_k,
                )?);
            }
        }
    }
    Ok(out)
}

pub fn detect_readings(cfg: &RunConfig, artifact: &ModelArtifact, readings: &[SensorReading]) -> CliResult<Detection> {
    let inferred = streams::inferred_layouts(readings, artifact.sample_period_ms);
    let layouts = artifact.layouts(&inferred)?;
    let windows = streams::window_streams(readings, &layouts, artifact.sample_period_ms, &artifact.pipeline)?;
    // one worker per stream at a time; merged in stream order
    let per_stream = windows
        .par_iter()
        .map(|sw| detect_stream(sw, artifact, cfg.scorer, cfg.detect.emit_from_s, cfg.detect.top_k))
        .collect::<CliResult<Vec<_>>>()?;
    let mut decisions = Vec::new();
    let mut explanations = Vec::new();
    let mut latency_ns = Vec::new();
    let (mut entropy, mut concentration, mut singular) = (Vec::new(), Vec::new(), 0);
    for s in per_stream {
        decisions.extend(s.decisions);
        explanations.extend(s.explanations);
        latency_ns.extend(s.latency_ns);
        entropy.extend(s.entropy);
        concentration.extend(s.concentration);
        singular += s.singular;
    }
    Ok(Detection {
        decisions,
        explanations,
        latency_ns,
        interpretability: InterpretabilityReport {
            scorer: cfg.scorer,
            windows: entropy.len(),
            attention_entropy_norm: mean(&entropy),
            attribution_concentration: mean(&concentration),
            singular_windows: singular,
        },
    })
}

pub struct DetectOutputs {
    pub decisions: PathBuf,
    pub explanations: PathBuf,
    pub interpretability: PathBuf,
    pub latency: PathBuf,
    pub manifest: PathBuf,
}

pub fn run(cfg: &RunConfig, model: &Path, input: &Path, out_dir: &Path) -> CliResult<DetectOutputs> {
    cfg.validate()?;
    let mut manifest = RunManifest::new("detect", cfg);
    manifest.input(model)?;
    manifest.input(input)?;
    let artifact = ModelArtifact::load(model)?;
    let readings = manifest.time("read", || files::read_telemetry(input))?;
    let det = manifest.time("detect", || detect_readings(cfg, &artifact, &readings))?;
    files::create_dir(out_dir)?;
    let outputs = DetectOutputs {
        decisions: out_dir.join(DECISIONS_FILE),
        explanations: out_dir.join(EXPLANATIONS_FILE),
        interpretability: out_dir.join(INTERPRETABILITY_FILE),
        latency: out_dir.join(LATENCY_FILE),
        manifest: PathBuf::new(),
    };
    files::write_jsonl(&outputs.decisions, &det.decisions)?;
    files::write_jsonl(&outputs.explanations, &det.explanations)?;
    files::write_json(&outputs.interpretability, &det.interpretability)?;
    let latency = LatencyReport {
        scoring_ns: eval::latency_stats(&det.latency_ns).ok(),
    };
    files::write_json(&outputs.latency, &latency)?;
    for p in [&outputs.decisions, &outputs.explanations, &outputs.interpretability, &outputs.latency] {
        manifest.output(p)?;
    }
    let manifest = manifest.write(out_dir)?;
    Ok(DetectOutputs { manifest, ..outputs })
}
