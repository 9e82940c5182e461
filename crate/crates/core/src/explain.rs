//! Gradient attribution of the anomaly score to raw window samples, and the
//! explanation records built from it.
//!
//! Gradients are taken with the step's memory context held fixed. For the
//! Mahalanobis score the backward pass is
//!
//! ```text
//! g        = Σ⁻¹(h̃ − μ) / S
//! ∂S/∂e_i  = α_i (gᵀh_i − gᵀh̃)
//! ∂S/∂h_i  = α_i g + ∂S/∂e_i · Wᵀ(v ∘ (1 − tanh²(W h_i + U c)))
//! ∂S/∂x̂_i  = W_eᵀ (∂S/∂h_i ∘ (1 − h_i²))
//! ∂S/∂x_i  = routed through the moving median, times 1/(max_i − min_i)
//! ```
//!
//! Attributions are reported per calibrated range, `∂S/∂x_i · (max_i − min_i)`,
//! so channels in different physical units rank on one scale.
//! [`Attribution::raw_units`] recovers the per-unit gradient.
//!
//! The residual score `a = sigmoid(‖x̂ − x̂_pred‖)` uses a prediction made from
//! the previous window, so only its first factor depends on the current
//! samples.

use serde::{Deserialize, Serialize};

use crate::context::EncoderParams;
use crate::detector;
use crate::error::{Error, Result};
use crate::pipeline::{self, Forward, PipelineConfig, ScorerKind, StreamModel};
use crate::preprocess::NormalizerState;
use crate::telemetry::WindowFrame;

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Analytic and numeric gradients agree when every entry is within this
/// relative error...
pub const GRADIENT_REL_TOL: f64 = 1e-4;
/// ...or within this absolute error.
pub const GRADIENT_ABS_TOL: f64 = 1e-7;

/// Largest `|a − n| / max(|n|, abs/rel)` over paired entries. At most
/// [`GRADIENT_REL_TOL`] iff every entry is within the relative tolerance or
/// the absolute one.
pub fn gradient_discrepancy(analytic: &[f64], numeric: &[f64]) -> f64 {
    let floor = GRADIENT_ABS_TOL / GRADIENT_REL_TOL;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(floor))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub stream_id: String,
    pub start_index: u64,
    pub scorer: ScorerKind,
    pub channels: usize,
    pub len: usize,
    /// `∂score/∂x[channel][offset] · (max − min)[channel]`, row-major N × L.
    /// Zero for a degenerate channel.
    pub values: Vec<f64>,
    /// Score is at a point where it is not differentiable (S = 0 or a zero
    /// residual); `values` are all zero.
    pub singular: bool,
}

impl Attribution {
    pub fn get(&self, channel: usize, offset: usize) -> f64 {
        self.values[channel * self.len + offset]
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.len..(channel + 1) * self.len]
    }

    /// Per-unit gradient `∂score/∂x` in each channel's native units.
    pub fn raw_units(&self, normalizer: &NormalizerState) -> Vec<f64> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * normalizer.bounds[i / self.len].scale())
            .collect()
    }

    fn zeros(raw: &WindowFrame, scorer: ScorerKind, singular: bool) -> Self {
        Attribution {
            stream_id: raw.stream_id.clone(),
            start_index: raw.start_index,
            scorer,
            channels: raw.channels,
            len: raw.len,
            values: vec![0.0; raw.channels * raw.len],
            singular,
        }
    }
}

/// Everything needed to re-run one window's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ScoringContext<'a> {
    pub encoder: &'a EncoderParams,
    pub model: &'a StreamModel,
    pub cfg: &'a PipelineConfig,
    pub context: &'a [f64],
    pub prev_attended: Option<&'a [f64]>,
}

impl<'a> ScoringContext<'a> {
    pub fn forward(&self, raw: &WindowFrame) -> Result<Forward> {
        pipeline::forward(raw, self.context, self.prev_attended, self.encoder, self.model, self.cfg)
    }

    pub fn score(&self, raw: &WindowFrame, scorer: ScorerKind) -> Result<f64> {
        Ok(self.forward(raw)?.score(scorer))
    }
}

/// Analytic attribution for a window already run through [`ScoringContext::forward`].
pub fn attribute(raw: &WindowFrame, fwd: &Forward, sc: &ScoringContext<'_>, scorer: ScorerKind) -> Result<Attribution> {
    let n = raw.channels;
    let l = raw.len;
    // gradient with respect to the normalized (denoised) window, row-major
    let grad_norm: Vec<f64> = match scorer {
        ScorerKind::Mahalanobis => {
            let step = &fwd.step;
            let Some(g) = detector::mahalanobis_gradient(&step.attended, &sc.model.baseline, fwd.mahalanobis) else {
                return Ok(Attribution::zeros(raw, scorer, true));
            };
            let enc = sc.encoder;
            let g_dot_attended: f64 = g.iter().zip(&step.attended).map(|(a, b)| a * b).sum();
            let mut out = Vec::with_capacity(n * l);
            for i in 0..n {
                let h = &step.per_sensor_embeddings[i];
                let alpha = step.attention[i];
                let g_dot_h: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
                let d_logit = alpha * (g_dot_h - g_dot_attended);
                // v ∘ (1 − z²), pulled back through W
                let back: Vec<f64> = enc
                    .v_attn
                    .iter()
                    .zip(&step.attention_hidden[i])
                    .map(|(v, z)| v * (1.0 - z * z))
                    .collect();
                let through_w = enc.w_attn.tr_mul_vec(&back);
                let d_pre: Vec<f64> = (0..enc.dim)
                    .map(|j| (alpha * g[j] + d_logit * through_w[j]) * (1.0 - h[j] * h[j]))
                    .collect();
                out.extend(enc.w_embed.tr_mul_vec(&d_pre));
            }
            out
        }
        ScorerKind::Residual => {
            let r = fwd.residual_norm;
            if r <= 0.0 {
                return Ok(Attribution::zeros(raw, scorer, true));
            }
            let a = fwd.residual;
            let outer = a * (1.0 - a) / r;
            fwd.normalized
                .values
                .iter()
                .zip(&fwd.predicted)
                .map(|(x, p)| outer * (x - p))
                .collect()
        }
    };

    // ∂x̂/∂x · (max − min) is 1, or 0 for a degenerate channel
    let mut values = vec![0.0; n * l];
    for ch in 0..n {
        if sc.model.normalizer.bounds[ch].is_degenerate() {
            continue;
        }
        for t in 0..l {
            let src = fwd.median_source[ch][t];
            values[ch * l + src] += grad_norm[ch * l + t];
        }
    }
    Ok(Attribution {
        stream_id: raw.stream_id.clone(),
        start_index: raw.start_index,
        scorer,
        channels: n,
        len: l,
        values,
        singular: false,
    })
}

/// Central differences of the score, reported on the same per-range scale as
/// [`attribute`]. Each sample is perturbed by `h·(max − min)` raw (or `h` raw
/// for a degenerate channel), with the memory context held fixed.
pub fn finite_diff_attribution(raw: &WindowFrame, sc: &ScoringContext<'_>, scorer: ScorerKind, h: f64) -> Result<Attribution> {
    let range = |ch: usize| {
        let b = sc.model.normalizer.bounds[ch];
        if b.is_degenerate() {
            1.0
        } else {
            b.max - b.min
        }
    };
    let mut values = finite_diff(raw, h, |w| sc.score(w, scorer), range)?;
    for (i, v) in values.iter_mut().enumerate() {
        *v *= range(i / raw.len);
    }
    Ok(Attribution {
        stream_id: raw.stream_id.clone(),
        start_index: raw.start_index,
        scorer,
        channels: raw.channels,
        len: raw.len,
        values,
        singular: false,
    })
}

/// Generic central-difference gradient of `f` at `raw`; `range(ch)` converts
/// the step into raw units for channel `ch`.
pub fn finite_diff(
    raw: &WindowFrame,
    h: f64,
    mut f: impl FnMut(&WindowFrame) -> Result<f64>,
    range: impl Fn(usize) -> f64,
) -> Result<Vec<f64>> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Parameter(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = raw.clone();
    let mut out = vec![0.0; raw.channels * raw.len];
    for ch in 0..raw.channels {
        let step = h * range(ch);
        for t in 0..raw.len {
            let idx = ch * raw.len + t;
            let orig = raw.values[idx];
            probe.values[idx] = orig + step;
            let up = f(&probe)?;
            probe.values[idx] = orig - step;
            let down = f(&probe)?;
            probe.values[idx] = orig;
            out[idx] = (up - down) / (2.0 * step);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contributor {
    pub channel: String,
    pub offset: usize,
    pub attribution: f64,
    /// +1 or −1.
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub stream_id: String,
    pub start_index: u64,
    pub timestamp_ms: u64,
    pub scorer: ScorerKind,
    pub score: f64,
    pub theta: f64,
    pub decision: u8,
    pub top_k: Vec<Contributor>,
    pub attention: Vec<f64>,
    pub rationale_text: String,
}

impl ExplanationRecord {
    pub fn top_channel(&self) -> Option<&str> {
        self.top_k.first().map(|c| c.channel.as_str())
    }
}

/// Builds a record with the `top_k` largest-magnitude attributions and a
/// templated rationale derived only from the record's own fields.
#[allow(clippy::too_many_arguments)]
pub fn render_explanation(
    attribution: &Attribution,
    channels: &[String],
    attention: &[f64],
    score: f64,
    theta: f64,
    decision: u8,
    timestamp_ms: u64,
    top_k: usize,
) -> Result<ExplanationRecord> {
    if top_k == 0 {
        return Err(Error::Parameter("top_k must be >= 1".into()));
    }
    if channels.len() != attribution.channels || attention.len() != attribution.channels {
        return Err(Error::dim(attribution.channels, channels.len(), "explanation channels"));
    }
    let mut entries: Vec<(usize, usize, f64)> = (0..attribution.channels)
        .flat_map(|c| (0..attribution.len).map(move |t| (c, t)))
        .map(|(c, t)| (c, t, attribution.get(c, t)))
        .filter(|e| e.2 != 0.0)
        .collect();
    // magnitude descending; ties by position so ordering is total
    entries.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()).then((a.0, a.1).cmp(&(b.0, b.1))));
    let top: Vec<Contributor> = entries
        .into_iter()
        .take(top_k)
        .map(|(c, t, v)| Contributor {
            channel: channels[c].clone(),
            offset: t,
            attribution: v,
            sign: if v < 0.0 { -1 } else { 1 },
        })
        .collect();
    let mut record = ExplanationRecord {
        stream_id: attribution.stream_id.clone(),
        start_index: attribution.start_index,
        timestamp_ms,
        scorer: attribution.scorer,
        score,
        theta,
        decision,
        top_k: top,
        attention: attention.to_vec(),
        rationale_text: String::new(),
    };
    record.rationale_text = rationale(&record, channels);
    Ok(record)
}

/// The rationale sentence for a record.
pub fn rationale(record: &ExplanationRecord, channels: &[String]) -> String {
    let contributors = if record.top_k.is_empty() {
        "at baseline mean; no contributor".to_string()
    } else {
        let parts: Vec<String> = record
            .top_k
            .iter()
            .map(|c| format!("{}@{} ({:+.4e})", c.channel, c.offset, c.attribution))
            .collect();
        format!("dominant contributors {}", parts.join(", "))
    };
    let focus = record
        .attention
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, a)| format!("{} ({:.3})", channels.get(i).map_or("?", String::as_str), a))
        .unwrap_or_else(|| "none".into());
    format!(
        "Window {} on {} scored {:.4} (θ={:.4}): {}; attention concentrated on {}.",
        record.start_index, record.stream_id, record.score, record.theta, contributors, focus
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpretabilityMetrics {
    pub attention_entropy_norm: f64,
    pub attribution_concentration: f64,
    pub windows: usize,
}

/// Attention entropy divided by `ln N` (0 for a single sensor, where no
/// spread is possible); uses `0·ln 0 = 0`.
pub fn attention_entropy_norm(attention: &[f64]) -> f64 {
    let n = attention.len();
    if n < 2 {
        return 0.0;
    }
    let h: f64 = attention
        .iter()
        .filter(|&&a| a > 0.0)
        .map(|&a| -a * a.ln())
        .sum();
    (h / (n as f64).ln()).clamp(0.0, 1.0)
}

/// `max|A| / Σ|A|`, 0 when every entry is zero.
pub fn attribution_concentration(values: &[f64]) -> f64 {
    let total: f64 = values.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    values.iter().map(|v| v.abs()).fold(0.0, f64::max) / total
}

/// Means of the two proxies over scored windows.
pub fn interpretability_metrics<'a>(
    attentions: impl IntoIterator<Item = &'a [f64]>,
    attributions: impl IntoIterator<Item = &'a [f64]>,
) -> Result<InterpretabilityMetrics> {
    let ents: Vec<f64> = attentions.into_iter().map(attention_entropy_norm).collect();
    if ents.is_empty() {
        return Err(Error::Parameter("interpretability metrics need at least one window".into()));
    }
    let concs: Vec<f64> = attributions.into_iter().map(attribution_concentration).collect();
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    Ok(InterpretabilityMetrics {
        attention_entropy_norm: mean(&ents),
        attribution_concentration: mean(&concs),
        windows: ents.len(),
    })
}
