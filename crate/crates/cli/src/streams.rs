//! Telemetry → per-stream window sequences.

use std::collections::BTreeMap;

use ctxscope_core::pipeline::PipelineConfig;
use ctxscope_core::telemetry::{self, SensorReading, StreamSchema, WindowFrame};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct StreamWindows {
    pub stream_id: String,
    pub channels: Vec<String>,
    /// First grid slot holding data for the stream.
    pub first_slot: u64,
    pub sample_period_ms: u64,
    /// Windows of each gap-free segment, in time order.
    pub segments: Vec<Vec<WindowFrame>>,
}

impl StreamWindows {
    pub fn window_count(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    pub fn windows(&self) -> impl Iterator<Item = &WindowFrame> {
        self.segments.iter().flatten()
    }

    /// Grid slot that lies `seconds` after the stream's first sample.
    pub fn slot_after(&self, seconds: u64) -> u64 {
        self.first_slot + seconds * 1000 / self.sample_period_ms
    }

    pub fn ts_of(&self, slot: u64) -> u64 {
        slot * self.sample_period_ms
    }
}

/// Channel layouts inferred from the telemetry, by stream id.
pub fn inferred_layouts(readings: &[SensorReading], period: u64) -> BTreeMap<String, Vec<String>> {
    telemetry::infer_schemas(readings, period)
        .into_iter()
        .map(|s| (s.stream_id, s.channels))
        .collect()
}

/// Aligns and windows every stream, ordered by stream id. `layouts` fixes the
/// channel order of each stream; a stream missing from it is a schema error.
pub fn window_streams(
    readings: &[SensorReading],
    layouts: &BTreeMap<String, Vec<String>>,
    period: u64,
    cfg: &PipelineConfig,
) -> CliResult<Vec<StreamWindows>> {
    let mut by_stream: BTreeMap<&str, Vec<SensorReading>> = BTreeMap::new();
    for r in readings {
        by_stream.entry(r.stream_id.as_str()).or_default().push(r.clone());
    }
    let mut out = Vec::with_capacity(by_stream.len());
    for (stream, rs) in by_stream {
        let channels = layouts
            .get(stream)
            .ok_or_else(|| CliError::Schema(format!("no channel layout for stream {stream}")))?;
        let names: Vec<&str> = channels.iter().map(String::as_str).collect();
        let schema = StreamSchema::new(stream, &names, period)?;
        let segments = telemetry::align_readings(&rs, &schema, cfg.max_gap)?;
        let first_slot = segments.first().map_or(0, |s| s.start_slot);
        let windows = segments
            .iter()
            .map(|s| s.windows(cfg.window_len, cfg.stride))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(StreamWindows {
            stream_id: stream.to_string(),
            channels: channels.clone(),
            first_slot,
            sample_period_ms: period,
            segments: windows,
        });
    }
    Ok(out)
}
