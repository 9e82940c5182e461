//! Per-stream calibration and scoring.
//!
//! A raw window is denoised, normalized with the frozen calibration bounds,
//! encoded against the stream's memory and scored. Both contextual scorers are
//! evaluated on every window; the rule baseline runs on the raw window.

use serde::{Deserialize, Serialize};

use crate::context::{self, EncodedStep, EncoderParams, MemoryBuffer};
use crate::detector::{self, BaselineModel, ResidualHead};
use crate::error::{Error, Result};
use crate::preprocess::{self, NormalizerState};
use crate::rules::{self, RuleMultipliers, RuleSet, RuleVerdict};
use crate::telemetry::{self, WindowFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Mahalanobis,
    Residual,
}

impl ScorerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScorerKind::Mahalanobis => "mahalanobis",
            ScorerKind::Residual => "residual",
        }
    }
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mahalanobis" => Ok(ScorerKind::Mahalanobis),
            "residual" => Ok(ScorerKind::Residual),
            other => Err(Error::Parameter(format!("unknown scorer {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window_len: usize,
    pub stride: usize,
    pub max_gap: usize,
    pub denoise_width: usize,
    pub epsilon_scale: f64,
    pub quantile: f64,
    pub rules: RuleMultipliers,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window_len: telemetry::DEFAULT_WINDOW_LEN,
            stride: telemetry::DEFAULT_STRIDE,
            max_gap: telemetry::DEFAULT_MAX_GAP,
            denoise_width: preprocess::DEFAULT_DENOISE_WIDTH,
            epsilon_scale: detector::DEFAULT_EPSILON_SCALE,
            quantile: detector::DEFAULT_QUANTILE,
            rules: RuleMultipliers::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.stride == 0 {
            return Err(Error::Parameter("window_len and stride must be >= 1".into()));
        }
        if self.denoise_width == 0 || self.denoise_width.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "denoise_width must be odd, got {}",
                self.denoise_width
            )));
        }
        if !(0.0..=1.0).contains(&self.quantile) {
            return Err(Error::Parameter(format!("quantile {} outside [0, 1]", self.quantile)));
        }
        Ok(())
    }
}

/// Calibrated state for one stream (or the pooled global fallback).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamModel {
    pub channels: Vec<String>,
    pub normalizer: NormalizerState,
    pub baseline: BaselineModel,
    pub residual: ResidualHead,
    pub rules: RuleSet,
    pub calibration_windows: usize,
}

impl StreamModel {
    pub fn theta(&self, scorer: ScorerKind) -> f64 {
        match scorer {
            ScorerKind::Mahalanobis => self.baseline.theta,
            ScorerKind::Residual => self.residual.theta,
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Denoised window in raw units.
    pub denoised: WindowFrame,
    /// For each channel and column, which raw sample the median picked.
    pub median_source: Vec<Vec<usize>>,
    pub normalized: WindowFrame,
    pub step: EncodedStep,
    pub mahalanobis: f64,
    /// Prediction of this window's normalized values by the residual head.
    pub predicted: Vec<f64>,
    pub residual_norm: f64,
    pub residual: f64,
}

impl Forward {
    pub fn score(&self, scorer: ScorerKind) -> f64 {
        match scorer {
            ScorerKind::Mahalanobis => self.mahalanobis,
            ScorerKind::Residual => self.residual,
        }
    }
}

/// Pure forward pass with an explicit context and previous attended vector.
/// When there is no previous window the residual head predicts from `μ`.
pub fn forward(
    raw: &WindowFrame,
    context: &[f64],
    prev_attended: Option<&[f64]>,
    encoder: &EncoderParams,
    model: &StreamModel,
    cfg: &PipelineConfig,
) -> Result<Forward> {
    if raw.channels != model.channels.len() {
        return Err(Error::Schema(format!(
            "window of {} has {} channels, model expects {}",
            raw.stream_id,
            raw.channels,
            model.channels.len()
        )));
    }
    if raw.len != encoder.window_len {
        return Err(Error::dim(encoder.window_len, raw.len, "window length"));
    }
    let mut denoised = raw.clone();
    let mut median_source = Vec::with_capacity(raw.channels);
    for ch in 0..raw.channels {
        let (vals, src) = preprocess::median_filter(raw.row(ch), cfg.denoise_width)?;
        denoised.row_mut(ch).copy_from_slice(&vals);
        median_source.push(src);
    }
    let normalized = model.normalizer.normalize_window(&denoised)?;
    let step = context::encode_with_context(&normalized, context, encoder)?;
    let mahalanobis = detector::mahalanobis_score(&step.attended, &model.baseline)?;
    let basis = prev_attended.unwrap_or(&model.baseline.mu);
    let predicted = model.residual.predict(basis)?;
    let residual_norm = detector::residual_norm(&normalized.values, &predicted)?;
    Ok(Forward {
        denoised,
        median_source,
        normalized,
        step,
        mahalanobis,
        predicted,
        residual_norm,
        residual: detector::sigmoid(residual_norm),
    })
}

/// Mutable per-stream scoring state: the memory buffer and the previous
/// attended vector. Bounded by `k·d + d` floats.
#[derive(Debug, Clone)]
pub struct StreamState {
    pub memory: MemoryBuffer,
    pub prev_attended: Option<Vec<f64>>,
}

impl StreamState {
    pub fn new(encoder: &EncoderParams) -> Self {
        StreamState {
            memory: MemoryBuffer::new(encoder.context_len),
            prev_attended: None,
        }
    }

    pub fn context(&self, dim: usize) -> Vec<f64> {
        context::context_vector(&self.memory, dim)
    }

    /// Scores one raw window and advances the state.
    pub fn advance(
        &mut self,
        raw: &WindowFrame,
        encoder: &EncoderParams,
        model: &StreamModel,
        cfg: &PipelineConfig,
    ) -> Result<Forward> {
        let ctx = self.context(encoder.dim);
        let fwd = forward(raw, &ctx, self.prev_attended.as_deref(), encoder, model, cfg)?;
        self.memory.push(fwd.step.pooled());
        self.prev_attended = Some(fwd.step.attended.clone());
        Ok(fwd)
    }

    pub fn state_bytes(&self) -> usize {
        self.memory.state_bytes()
            + self
                .prev_attended
                .as_ref()
                .map_or(0, |v| v.capacity() * std::mem::size_of::<f64>())
    }
}

/// Minimum calibration windows for embedding dimension `d`.
pub fn min_calibration_windows(dim: usize) -> usize {
    dim + 1
}

/// Fits a [`StreamModel`] on calibration windows. Each group is one stream's
/// windows in time order (memory is carried within a group and reset between
/// groups); several groups give a pooled model.
pub fn calibrate(
    groups: &[&[WindowFrame]],
    channels: &[String],
    encoder: &EncoderParams,
    cfg: &PipelineConfig,
) -> Result<StreamModel> {
    cfg.validate()?;
    let total: usize = groups.iter().map(|g| g.len()).sum();
    let need = min_calibration_windows(encoder.dim);
    if total < need {
        return Err(Error::Calibration(format!(
            "need at least {need} calibration windows (d + 1 with d = {}), got {total}",
            encoder.dim
        )));
    }
    let all_raw: Vec<WindowFrame> = groups.iter().flat_map(|g| g.iter().cloned()).collect();
    if let Some(w) = all_raw.iter().find(|w| w.channels != channels.len()) {
        return Err(Error::Schema(format!(
            "calibration window of {} has {} channels, expected {}",
            w.stream_id,
            w.channels,
            channels.len()
        )));
    }
    let denoised = all_raw
        .iter()
        .map(|w| preprocess::denoise(w, cfg.denoise_width))
        .collect::<Result<Vec<_>>>()?;
    let normalizer = preprocess::fit_normalizer(&denoised)?;

    // encode each group with its own memory
    let mut attended = Vec::with_capacity(total);
    let mut flats = Vec::with_capacity(total);
    let mut pair_x = Vec::new();
    let mut pair_y = Vec::new();
    let mut offset = 0;
    for g in groups {
        let mut memory = MemoryBuffer::new(encoder.context_len);
        let mut prev: Option<(u64, Vec<f64>)> = None;
        for (i, raw) in g.iter().enumerate() {
            let norm = normalizer.normalize_window(&denoised[offset + i])?;
            let step = context::encode_step(&norm, &mut memory, encoder)?;
            if let Some((start, h)) = prev.take() {
                if raw.start_index == start + cfg.stride as u64 {
                    pair_x.push(h);
                    pair_y.push(norm.values.clone());
                }
            }
            prev = Some((raw.start_index, step.attended.clone()));
            attended.push(step.attended);
            flats.push(norm.values);
        }
        offset += g.len();
    }

    let mut baseline = detector::fit_baseline(&attended, cfg.epsilon_scale)?;
    let scores = attended
        .iter()
        .map(|h| detector::mahalanobis_score(h, &baseline))
        .collect::<Result<Vec<_>>>()?;
    baseline.theta = detector::select_threshold(&scores, cfg.quantile)?;

    let mut residual = detector::fit_residual_head(&pair_x, &pair_y)?;
    // calibration residual scores, replaying the same prediction rule as
    // detection (first window of a group predicts from μ)
    let mut res_scores = Vec::with_capacity(total);
    let mut offset = 0;
    for g in groups {
        for i in 0..g.len() {
            let basis = if i == 0 {
                &baseline.mu
            } else {
                &attended[offset + i - 1]
            };
            let pred = residual.predict(basis)?;
            res_scores.push(detector::residual_score(&flats[offset + i], &pred)?);
        }
        offset += g.len();
    }
    residual.theta = detector::select_threshold(&res_scores, cfg.quantile)?;

    let rules = rules::fit_rules(&all_raw, channels, cfg.rules)?;
    Ok(StreamModel {
        channels: channels.to_vec(),
        normalizer,
        baseline,
        residual,
        rules,
        calibration_windows: total,
    })
}

/// Rule verdict for a raw window.
pub fn rule_verdict(raw: &WindowFrame, model: &StreamModel) -> Result<RuleVerdict> {
    rules::rule_detect(raw, &model.rules)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{self, ScenarioKind, ScenarioSpec};
    use crate::telemetry::align_readings;

    fn windows(seed: u64, duration_s: u64) -> (Vec<WindowFrame>, Vec<String>) {
        let spec = ScenarioSpec {
            kind: ScenarioKind::Smartgrid,
            streams: 1,
            duration_s,
            sample_period_ms: 5000,
            seed,
            noise_scale: 1.0,
            ..ScenarioSpec::default()
        };
        let (readings, schemas) = simgen::generate_scenario(&spec).unwrap();
        let segs = align_readings(&readings, &schemas[0], 3).unwrap();
        (segs[0].windows(12, 1).unwrap(), schemas[0].channels.clone())
    }

    #[test]
    fn calibration_requires_enough_windows() {
        let (w, ch) = windows(1, 600);
        let enc = context::init_params(16, 12, 8, 3).unwrap();
        let cfg = PipelineConfig::default();
        match calibrate(&[&w[..5]], &ch, &enc, &cfg) {
            Err(Error::Calibration(msg)) => assert!(msg.contains("17"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let model = calibrate(&[&w], &ch, &enc, &cfg).unwrap();
        assert!(model.baseline.theta.is_finite());
        assert!(model.residual.theta >= 0.5 && model.residual.theta < 1.0);
        assert_eq!(model.calibration_windows, w.len());
    }

    #[test]
    fn replaying_calibration_reproduces_threshold_budget() {
        let (w, ch) = windows(2, 3600);
        let enc = context::init_params(16, 12, 8, 3).unwrap();
        let cfg = PipelineConfig::default();
        let model = calibrate(&[&w], &ch, &enc, &cfg).unwrap();
        let mut state = StreamState::new(&enc);
        let mut flagged = 0;
        for win in &w {
            let f = state.advance(win, &enc, &model, &cfg).unwrap();
            flagged += usize::from(detector::decide(f.mahalanobis, model.baseline.theta) == 1);
        }
        let n = w.len();
        let bound = n - detector::nearest_rank_index(n, cfg.quantile);
        assert!(flagged <= bound, "{flagged} > {bound}");
    }
}
