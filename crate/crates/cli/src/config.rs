//! Run configuration: one TOML document, every section optional.
//!
//! ```toml
//! seed = 7
//! scorer = "mahalanobis"
//!
//! [scenario]
//! kind = "smartgrid"
//! streams = 10
//! duration_s = 7200
//!
//! [events.plan]
//! per_stream = 2
//! kinds = ["spike", "drift", "stuck", "spoof"]
//! magnitude = [5.0, 8.0]
//! duration = [3, 6]
//! warmup_s = 1800
//!
//! [pipeline]
//! window_len = 12
//!
//! [calibration]
//! warmup_s = 1800
//!
//! [detect]
//! emit_from_s = 1800
//! ```

use std::path::{Path, PathBuf};

use ctxscope_core::context::{DEFAULT_CONTEXT_LEN, DEFAULT_EMBED_DIM};
use ctxscope_core::explain::DEFAULT_TOP_K;
use ctxscope_core::pipeline::{PipelineConfig, ScorerKind};
use ctxscope_core::rng;
use ctxscope_core::simgen::{AnomalyEvent, EventPlan, NetworkEffects, ScenarioKind, ScenarioSpec};
use ctxscope_core::telemetry::DEFAULT_SAMPLE_PERIOD_MS;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Telemetry file for calibrate / detect / evaluate / explain-dump.
    pub input: Option<PathBuf>,
    /// Model artifact for detect / explain-dump.
    pub model: Option<PathBuf>,
    pub scorer: ScorerKind,
    pub scenario: ScenarioSection,
    pub events: EventsSection,
    pub network: Option<NetworkSection>,
    pub pipeline: PipelineConfig,
    pub encoder: EncoderSection,
    pub calibration: CalibrationSection,
    pub detect: DetectSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: None,
            input: None,
            model: None,
            scorer: ScorerKind::Mahalanobis,
            scenario: ScenarioSection::default(),
            events: EventsSection::default(),
            network: None,
            pipeline: PipelineConfig::default(),
            encoder: EncoderSection::default(),
            calibration: CalibrationSection::default(),
            detect: DetectSection::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    pub streams: usize,
    pub duration_s: u64,
    pub sample_period_ms: u64,
    /// Overrides the run seed for signal generation.
    pub seed: Option<u64>,
    pub noise_scale: f64,
    pub cycle_s: u64,
    pub start_ts_ms: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let d = ScenarioSpec::default();
        ScenarioSection {
            kind: d.kind,
            streams: d.streams,
            duration_s: d.duration_s,
            sample_period_ms: d.sample_period_ms,
            seed: None,
            noise_scale: d.noise_scale,
            cycle_s: d.cycle_s,
            start_ts_ms: d.start_ts_ms,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventsSection {
    pub plan: Option<EventPlan>,
    pub list: Vec<AnomalyEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub loss_prob: f64,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub jitter_ms: u64,
    /// Defaults to a substream of the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub dim: usize,
    pub context_len: usize,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            dim: DEFAULT_EMBED_DIM,
            context_len: DEFAULT_CONTEXT_LEN,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Calibrate on windows that end within this many seconds of each
    /// stream's first sample; all windows when unset.
    pub warmup_s: Option<u64>,
    /// Fit one model per stream (otherwise only the pooled model is used).
    pub per_stream: bool,
    /// Fall back to the pooled model for streams that cannot be calibrated
    /// on their own.
    pub global_fallback: bool,
    /// Grid period used to align telemetry.
    pub sample_period_ms: u64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            warmup_s: None,
            per_stream: true,
            global_fallback: true,
            sample_period_ms: DEFAULT_SAMPLE_PERIOD_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    /// Windows starting earlier than this many seconds after a stream's
    /// first sample still advance the memory but are not reported.
    pub emit_from_s: Option<u64>,
    pub top_k: usize,
}

impl Default for DetectSection {
    fn default() -> Self {
        DetectSection {
            emit_from_s: None,
            top_k: DEFAULT_TOP_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Concurrent streams at the high load tier.
    pub streams: usize,
    /// Windows scored per stream.
    pub windows: usize,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            streams: 1000,
            windows: 50,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.pipeline.validate()?;
        self.scenario_spec().validate()?;
        if self.encoder.dim == 0 || self.encoder.context_len == 0 {
            return Err(CliError::Config("encoder.dim and encoder.context_len must be >= 1".into()));
        }
        if self.calibration.sample_period_ms == 0 {
            return Err(CliError::Config("calibration.sample_period_ms must be > 0".into()));
        }
        if self.detect.top_k == 0 {
            return Err(CliError::Config("detect.top_k must be >= 1".into()));
        }
        if let Some(n) = &self.network {
            self.network_effects(n).validate()?;
        }
        for (name, p) in [("input", &self.input), ("model", &self.model)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(CliError::Config(format!("{name}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        let s = &self.scenario;
        ScenarioSpec {
            kind: s.kind,
            streams: s.streams,
            duration_s: s.duration_s,
            sample_period_ms: s.sample_period_ms,
            seed: s.seed.unwrap_or(self.seed),
            noise_scale: s.noise_scale,
            cycle_s: s.cycle_s,
            start_ts_ms: s.start_ts_ms,
        }
    }

    pub fn network_effects(&self, n: &NetworkSection) -> NetworkEffects {
        NetworkEffects {
            loss_prob: n.loss_prob,
            latency_ms: n.latency_ms,
            jitter_ms: n.jitter_ms,
            seed: n.seed.unwrap_or_else(|| rng::substream_seed(self.seed, &["network"])),
        }
    }

    pub fn encoder_seed(&self) -> u64 {
        self.encoder.seed.unwrap_or(self.seed)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_kind_names_the_field() {
        let e = RunConfig::parse("[scenario]\nkind = \"factory\"\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("kind"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 3\n").is_err());
        assert!(RunConfig::parse("[pipeline]\nwindow = 3\n").is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::parse("seed = 9\n[pipeline]\nwindow_len = 6\n[scenario]\nstreams = 3\n").unwrap();
        assert_eq!(c.pipeline.window_len, 6);
        assert_eq!(c.pipeline.stride, 1);
        assert_eq!(c.scenario_spec().seed, 9);
        assert_eq!(c.scenario_spec().streams, 3);
    }
}
