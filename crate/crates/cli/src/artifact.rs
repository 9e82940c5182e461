//! The model artifact: everything detection needs, as one JSON document.
//! Matrices are stored row-major as `{rows, cols, data}`.

use std::collections::BTreeMap;
use std::path::Path;

use ctxscope_core::context::EncoderParams;
use ctxscope_core::pipeline::{PipelineConfig, ScorerKind, StreamModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::files;

pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_FILE: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub seed: u64,
    pub scorer: ScorerKind,
    pub pipeline: PipelineConfig,
    pub sample_period_ms: u64,
    pub calibration_warmup_s: Option<u64>,
    pub encoder: EncoderParams,
    /// Per-stream models, by stream id.
    pub streams: BTreeMap<String, StreamModel>,
    /// Pooled models, keyed by comma-joined channel layout.
    pub global: BTreeMap<String, StreamModel>,
    /// Whether streams use their own model when one exists.
    pub per_stream: bool,
    pub global_fallback: bool,
    /// sha256 of the calibration telemetry.
    pub input_sha256: String,
}

pub fn layout_key(channels: &[String]) -> String {
    channels.join(",")
}

impl ModelArtifact {
    /// The model that scores `stream`, if any.
    pub fn model_for(&self, stream: &str) -> Option<&StreamModel> {
        if self.per_stream {
            if let Some(m) = self.streams.get(stream) {
                return Some(m);
            }
        }
        None
    }

    /// Model for a stream with the given channel set: its own, else the pooled
    /// model of the same layout when fallback (or pooled-only mode) allows.
    pub fn resolve(&self, stream: &str, channels: &[String]) -> CliResult<&StreamModel> {
        if let Some(m) = self.model_for(stream) {
            return Ok(m);
        }
        if self.global_fallback || !self.per_stream {
            let mut sorted = channels.to_vec();
            sorted.sort();
            for m in self.global.values() {
                let mut mc = m.channels.clone();
                mc.sort();
                if mc == sorted {
                    return Ok(m);
                }
            }
        }
        Err(CliError::Schema(format!(
            "stream {stream} with channels [{}] matches no calibrated model",
            channels.join(", ")
        )))
    }

    /// Channel layouts the artifact can score, used to align detection input.
    pub fn layouts(&self, inferred: &BTreeMap<String, Vec<String>>) -> CliResult<BTreeMap<String, Vec<String>>> {
        inferred
            .iter()
            .map(|(s, ch)| Ok((s.clone(), self.resolve(s, ch)?.channels.clone())))
            .collect()
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        files::write_json(path, self)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let a: ModelArtifact = files::read_json(path)?;
        if a.format_version != FORMAT_VERSION {
            return Err(CliError::Schema(format!(
                "{}: artifact format {} (expected {FORMAT_VERSION})",
                path.display(),
                a.format_version
            )));
        }
        a.encoder.validate()?;
        Ok(a)
    }
}
