//! Min-max normalization fitted on calibration data, and moving-median
//! denoising.
//!
//! Bounds are frozen after fitting. Values outside the calibration range map
//! outside `[0, 1]`; they are not clamped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::WindowFrame;

pub const DEFAULT_DENOISE_WIDTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelBounds {
    pub min: f64,
    pub max: f64,
}

impl ChannelBounds {
    pub fn new(min: f64, max: f64) -> Self {
        ChannelBounds { min, max }
    }

    pub fn is_degenerate(&self) -> bool {
        self.max <= self.min
    }

    /// `1 / (max - min)`, or 0 for a degenerate channel (whose normalized
    /// value does not depend on the input).
    pub fn scale(&self) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            1.0 / (self.max - self.min)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub bounds: Vec<ChannelBounds>,
    /// Calibration samples seen per channel.
    pub fitted_on: Vec<u64>,
}

impl NormalizerState {
    pub fn channels(&self) -> usize {
        self.bounds.len()
    }

    pub fn normalize_window(&self, window: &WindowFrame) -> Result<WindowFrame> {
        if window.channels != self.channels() {
            return Err(Error::dim(self.channels(), window.channels, "normalizer channels"));
        }
        let mut out = window.clone();
        for (ch, b) in self.bounds.iter().enumerate() {
            for v in out.row_mut(ch) {
                *v = normalize(*v, b);
            }
        }
        Ok(out)
    }
}

pub fn fit_normalizer(calibration: &[WindowFrame]) -> Result<NormalizerState> {
    let first = calibration
        .first()
        .ok_or_else(|| Error::Calibration("normalizer needs at least one calibration window".into()))?;
    let n = first.channels;
    let mut bounds = vec![ChannelBounds::new(f64::INFINITY, f64::NEG_INFINITY); n];
    let mut fitted_on = vec![0u64; n];
    for w in calibration {
        if w.channels != n {
            return Err(Error::dim(n, w.channels, "calibration window channels"));
        }
        for (ch, b) in bounds.iter_mut().enumerate() {
            for &v in w.row(ch) {
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "non-finite calibration value in window {} of {}",
                        w.start_index, w.stream_id
                    )));
                }
                b.min = b.min.min(v);
                b.max = b.max.max(v);
            }
            fitted_on[ch] += w.len as u64;
        }
    }
    if fitted_on.contains(&0) {
        return Err(Error::Calibration("calibration windows are empty".into()));
    }
    Ok(NormalizerState { bounds, fitted_on })
}

/// `(value - min) / (max - min)`; a degenerate channel maps to 0.5.
#[inline]
pub fn normalize(value: f64, bounds: &ChannelBounds) -> f64 {
    if bounds.is_degenerate() {
        0.5
    } else {
        (value - bounds.min) / (bounds.max - bounds.min)
    }
}

#[inline]
pub fn denormalize(normalized: f64, bounds: &ChannelBounds) -> f64 {
    if bounds.is_degenerate() {
        bounds.min
    } else {
        bounds.min + normalized * (bounds.max - bounds.min)
    }
}

/// Moving median of odd `width` with edge replication, applied per channel.
pub fn denoise(window: &WindowFrame, width: usize) -> Result<WindowFrame> {
    let mut out = window.clone();
    for ch in 0..window.channels {
        let (vals, _) = median_filter(window.row(ch), width)?;
        out.row_mut(ch).copy_from_slice(&vals);
    }
    Ok(out)
}

/// Moving median of one row. Also returns, for each output position, the index
/// of the input sample the median was taken from; the filter is locally the
/// selection of that sample, which is what gradients flow through.
pub fn median_filter(row: &[f64], width: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if width == 0 || width.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "denoise width must be odd and >= 1, got {width}"
        )));
    }
    let len = row.len();
    if width == 1 || len == 0 {
        return Ok((row.to_vec(), (0..len).collect()));
    }
    let half = width / 2;
    let mut vals = Vec::with_capacity(len);
    let mut srcs = Vec::with_capacity(len);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(width);
    for t in 0..len {
        scratch.clear();
        for k in 0..width {
            // edge replication
            let idx = (t + k).saturating_sub(half).min(len - 1);
            scratch.push((row[idx], idx));
        }
        // ties broken by index so the selected source is deterministic
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (v, idx) = scratch[half];
        vals.push(v);
        srcs.push(idx);
    }
    Ok((vals, srcs))
}
