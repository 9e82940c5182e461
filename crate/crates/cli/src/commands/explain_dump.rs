//! Full attribution matrices for selected windows, with a finite-difference
//! cross-check of each.

use std::path::{Path, PathBuf};

use ctxscope_core::detector;
use ctxscope_core::explain::{self, ExplanationRecord, ScoringContext, DEFAULT_FD_STEP};
use ctxscope_core::pipeline::StreamState;
use ctxscope_core::telemetry::SensorReading;
use serde::{Deserialize, Serialize};

use crate::artifact::ModelArtifact;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::files;
use crate::manifest::RunManifest;
use crate::streams;

pub const DUMP_FILE: &str = "explain_dump.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainDump {
    pub record: ExplanationRecord,
    pub channels: Vec<String>,
    /// `attribution[channel][offset]`, per calibrated range.
    pub attribution: Vec<Vec<f64>>,
    /// The same gradient per native unit of each channel.
    pub attribution_raw: Vec<Vec<f64>>,
    pub singular: bool,
    /// [`explain::gradient_discrepancy`] against central differences; at most
    /// [`explain::GRADIENT_REL_TOL`] when the two agree.
    /// Large values mark samples tied inside the moving median (e.g. a stuck
    /// sensor), where the score has no derivative.
    pub finite_difference_discrepancy: f64,
}

/// Which windows to dump.
#[derive(Debug, Clone, Default)]
pub struct Selection {
    pub stream: Option<String>,
    pub window: Option<u64>,
}

impl Selection {
    fn wants_stream(&self, s: &str) -> bool {
        self.stream.as_deref().is_none_or(|x| x == s)
    }
}

/// Dumps the selected window, or every window the configured scorer flags.
pub fn dump(cfg: &RunConfig, artifact: &ModelArtifact, readings: &[SensorReading], sel: &Selection) -> CliResult<Vec<ExplainDump>> {
    let inferred = streams::inferred_layouts(readings, artifact.sample_period_ms);
    let layouts = artifact.layouts(&inferred)?;
    let windows = streams::window_streams(readings, &layouts, artifact.sample_period_ms, &artifact.pipeline)?;
    let enc = &artifact.encoder;
    let p = &artifact.pipeline;
    let scorer = cfg.scorer;
    let mut out = Vec::new();
    let mut found = false;
    for sw in windows.iter().filter(|sw| sel.wants_stream(&sw.stream_id)) {
        let model = artifact.resolve(&sw.stream_id, &sw.channels)?;
        for segment in &sw.segments {
            let mut state = StreamState::new(enc);
            for raw in segment {
                let context = state.context(enc.dim);
                let prev = state.prev_attended.clone();
                let fwd = state.advance(raw, enc, model, p)?;
                let (score, theta) = (fwd.score(scorer), model.theta(scorer));
                let decision = detector::decide(score, theta);
                let wanted = match sel.window {
                    Some(w) => w == raw.start_index,
                    None => decision == 1,
                };
                if !wanted {
                    continue;
                }
                found = true;
                let sc = ScoringContext {
                    encoder: enc,
                    model,
                    cfg: p,
                    context: &context,
                    prev_attended: prev.as_deref(),
                };
                let attribution = explain::attribute(raw, &fwd, &sc, scorer)?;
                let numeric = explain::finite_diff_attribution(raw, &sc, scorer, DEFAULT_FD_STEP)?;
                let record = explain::render_explanation(
                    &attribution,
                    &model.channels,
                    &fwd.step.attention,
                    score,
                    theta,
                    decision,
                    sw.ts_of(raw.start_index),
                    cfg.detect.top_k,
                )?;
                let raw_units = attribution.raw_units(&model.normalizer);
                out.push(ExplainDump {
                    record,
                    channels: model.channels.clone(),
                    attribution: (0..raw.channels).map(|c| attribution.row(c).to_vec()).collect(),
                    attribution_raw: raw_units.chunks(raw.len).map(<[f64]>::to_vec).collect(),
                    singular: attribution.singular,
                    finite_difference_discrepancy: explain::gradient_discrepancy(&attribution.values, &numeric.values),
                });
            }
        }
    }
    if sel.window.is_some() && !found {
        return Err(CliError::Schema(format!(
            "window {:?} of stream {:?} not found in the telemetry",
            sel.window, sel.stream
        )));
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig, model: &Path, input: &Path, sel: &Selection, out_dir: &Path) -> CliResult<PathBuf> {
    cfg.validate()?;
    let mut manifest = RunManifest::new("explain-dump", cfg);
    manifest.input(model)?;
    manifest.input(input)?;
    let artifact = ModelArtifact::load(model)?;
    let readings = files::read_telemetry(input)?;
    let dumps = manifest.time("explain", || dump(cfg, &artifact, &readings, sel))?;
    files::create_dir(out_dir)?;
    let path = out_dir.join(DUMP_FILE);
    files::write_jsonl(&path, &dumps)?;
    manifest.output(&path)?;
    manifest.write(out_dir)?;
    Ok(path)
}
