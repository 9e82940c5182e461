//! Telemetry data model, grid alignment and overlapping-window segmentation.
//!
//! Readings live on a fixed sampling grid: a reading with timestamp `ts` falls
//! into slot `round(ts / sample_period_ms)`. A window is the `N × L` slice of
//! an aligned segment starting at some slot; its `start_index` is that slot.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default window length: one minute at a five-second cadence.
pub const DEFAULT_WINDOW_LEN: usize = 12;
pub const DEFAULT_STRIDE: usize = 1;
/// Longest run of missing grid slots that is forward-filled.
pub const DEFAULT_MAX_GAP: usize = 3;
pub const DEFAULT_SAMPLE_PERIOD_MS: u64 = 5_000;

/// One timestamped scalar from one channel of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorReading {
    #[serde(rename = "ts")]
    pub timestamp_ms: u64,
    #[serde(rename = "stream")]
    pub stream_id: String,
    #[serde(rename = "channel")]
    pub channel_id: String,
    pub value: f64,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub truth_label: Option<u8>,
}

impl SensorReading {
    pub fn new(ts: u64, stream: &str, channel: &str, value: f64) -> Self {
        SensorReading {
            timestamp_ms: ts,
            stream_id: stream.to_string(),
            channel_id: channel.to_string(),
            value,
            truth_label: None,
        }
    }

    pub fn with_label(mut self, label: u8) -> Self {
        self.truth_label = Some(label);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(Error::Data(format!(
                "non-finite value {} at ts={} stream={} channel={}",
                self.value, self.timestamp_ms, self.stream_id, self.channel_id
            )));
        }
        match self.truth_label {
            None | Some(0) | Some(1) => Ok(()),
            Some(other) => Err(Error::Data(format!(
                "label must be 0 or 1, got {other} at ts={} stream={} channel={}",
                self.timestamp_ms, self.stream_id, self.channel_id
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSchema {
    pub stream_id: String,
    /// Fixed channel order; defines the row index of every window.
    pub channels: Vec<String>,
    pub sample_period_ms: u64,
}

impl StreamSchema {
    pub fn new(stream_id: &str, channels: &[&str], sample_period_ms: u64) -> Result<Self> {
        let schema = StreamSchema {
            stream_id: stream_id.to_string(),
            channels: channels.iter().map(|c| c.to_string()).collect(),
            sample_period_ms,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Schema(format!("stream {} has no channels", self.stream_id)));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].contains(c) {
                return Err(Error::Schema(format!(
                    "stream {} lists channel {c} twice",
                    self.stream_id
                )));
            }
        }
        if self.sample_period_ms == 0 {
            return Err(Error::Schema(format!(
                "stream {} has zero sample period",
                self.stream_id
            )));
        }
        Ok(())
    }

    pub fn channel_index(&self, channel: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == channel)
    }

    pub fn slot_of(&self, ts: u64) -> u64 {
        (ts + self.sample_period_ms / 2) / self.sample_period_ms
    }
}

/// A gap-free run of grid slots for all channels of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSegment {
    pub stream_id: String,
    /// Grid slot of column 0.
    pub start_slot: u64,
    /// `values[channel][column]`.
    pub values: Vec<Vec<f64>>,
    /// Per-sample truth labels (0 when the reading carried none).
    pub labels: Vec<Vec<u8>>,
    /// True where the value was forward-filled.
    pub imputed: Vec<Vec<bool>>,
}

impl AlignedSegment {
    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn imputed_count(&self) -> usize {
        self.imputed.iter().flatten().filter(|&&b| b).count()
    }

    pub fn windows(&self, len: usize, stride: usize) -> Result<Vec<WindowFrame>> {
        make_windows(
            &self.stream_id,
            self.start_slot,
            &self.values,
            Some(&self.labels),
            len,
            stride,
        )
    }
}

/// Snaps a stream's readings onto the schema grid.
///
/// Duplicate readings for the same slot resolve last-wins in timestamp order;
/// their labels combine by maximum. Runs of at most `max_gap` missing slots are
/// forward-filled (value and label); longer runs, and missing slots with no
/// earlier value, split the stream into separate segments.
pub fn align_readings(
    readings: &[SensorReading],
    schema: &StreamSchema,
    max_gap: usize,
) -> Result<Vec<AlignedSegment>> {
    schema.validate()?;
    let n = schema.channels.len();
    let mut placed: Vec<(u64, usize, f64, u8, u64)> = Vec::with_capacity(readings.len());
    for r in readings {
        if r.stream_id != schema.stream_id {
            return Err(Error::Schema(format!(
                "reading for stream {} handed to aligner of stream {}",
                r.stream_id, schema.stream_id
            )));
        }
        let ch = schema.channel_index(&r.channel_id).ok_or_else(|| {
            Error::Schema(format!(
                "unknown channel {} on stream {}",
                r.channel_id, schema.stream_id
            ))
        })?;
        r.validate()?;
        placed.push((
            schema.slot_of(r.timestamp_ms),
            ch,
            r.value,
            r.truth_label.unwrap_or(0),
            r.timestamp_ms,
        ));
    }
    if placed.is_empty() {
        return Ok(Vec::new());
    }
    // stable: equal timestamps keep input order, so the later line wins
    placed.sort_by_key(|p| p.4);
    let first = placed.iter().map(|p| p.0).min().unwrap_or(0);
    let last = placed.iter().map(|p| p.0).max().unwrap_or(0);
    let m = (last - first + 1) as usize;

    let mut raw: Vec<Vec<Option<(f64, u8)>>> = vec![vec![None; m]; n];
    for (slot, ch, value, label, _) in placed {
        let cell = &mut raw[ch][(slot - first) as usize];
        let label = cell.map_or(label, |(_, l)| l.max(label));
        *cell = Some((value, label));
    }

    let mut values = vec![vec![0.0; m]; n];
    let mut labels = vec![vec![0u8; m]; n];
    let mut imputed = vec![vec![false; m]; n];
    let mut usable = vec![true; m];
    for ch in 0..n {
        let mut j = 0;
        while j < m {
            if let Some((v, l)) = raw[ch][j] {
                values[ch][j] = v;
                labels[ch][j] = l;
                j += 1;
                continue;
            }
            let gap_start = j;
            while j < m && raw[ch][j].is_none() {
                j += 1;
            }
            let run = j - gap_start;
            if gap_start > 0 && run <= max_gap {
                let (v, l) = (values[ch][gap_start - 1], labels[ch][gap_start - 1]);
                for k in gap_start..j {
                    values[ch][k] = v;
                    labels[ch][k] = l;
                    imputed[ch][k] = true;
                }
            } else {
                usable[gap_start..j].iter_mut().for_each(|u| *u = false);
            }
        }
    }

    let mut segments = Vec::new();
    let mut j = 0;
    while j < m {
        if !usable[j] {
            j += 1;
            continue;
        }
        let start = j;
        while j < m && usable[j] {
            j += 1;
        }
        segments.push(AlignedSegment {
            stream_id: schema.stream_id.clone(),
            start_slot: first + start as u64,
            values: values.iter().map(|row| row[start..j].to_vec()).collect(),
            labels: labels.iter().map(|row| row[start..j].to_vec()).collect(),
            imputed: imputed.iter().map(|row| row[start..j].to_vec()).collect(),
        });
    }
    Ok(segments)
}

/// An `N × L` window, row-major (row = channel, column = time step).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFrame {
    pub stream_id: String,
    pub start_index: u64,
    pub channels: usize,
    pub len: usize,
    pub values: Vec<f64>,
    /// 1 iff any covered sample is labelled anomalous.
    pub truth_label: u8,
}

impl WindowFrame {
    pub fn from_rows(stream_id: &str, start_index: u64, rows: &[Vec<f64>]) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * len);
        for row in rows {
            if row.len() != len {
                return Err(Error::Alignment(format!(
                    "window rows of unequal length ({} vs {len})",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Ok(WindowFrame {
            stream_id: stream_id.to_string(),
            start_index,
            channels: rows.len(),
            len,
            values,
            truth_label: 0,
        })
    }

    #[inline]
    pub fn row(&self, channel: usize) -> &[f64] {
        &self.values[channel * self.len..(channel + 1) * self.len]
    }

    #[inline]
    pub fn row_mut(&mut self, channel: usize) -> &mut [f64] {
        &mut self.values[channel * self.len..(channel + 1) * self.len]
    }

    #[inline]
    pub fn get(&self, channel: usize, offset: usize) -> f64 {
        self.values[channel * self.len + offset]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|c| self.row(c).to_vec()).collect()
    }
}

/// Cuts `N` aligned channels of length `M` into windows of `len` columns every
/// `stride` columns. Window `j` covers columns `[j·stride, j·stride + len)`;
/// trailing partial windows are dropped.
pub fn make_windows(
    stream_id: &str,
    start_slot: u64,
    series: &[Vec<f64>],
    labels: Option<&[Vec<u8>]>,
    len: usize,
    stride: usize,
) -> Result<Vec<WindowFrame>> {
    if len == 0 || stride == 0 {
        return Err(Error::Parameter(format!(
            "window length and stride must be >= 1 (got {len}, {stride})"
        )));
    }
    let m = series.first().map_or(0, Vec::len);
    if let Some(bad) = series.iter().find(|row| row.len() != m) {
        return Err(Error::Alignment(format!(
            "channel lengths differ ({} vs {m})",
            bad.len()
        )));
    }
    if let Some(labels) = labels {
        if labels.len() != series.len() || labels.iter().any(|l| l.len() != m) {
            return Err(Error::Alignment("label matrix does not match series".into()));
        }
    }
    if m < len {
        return Ok(Vec::new());
    }
    let n = series.len();
    let count = (m - len) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let from = j * stride;
        let mut values = Vec::with_capacity(n * len);
        for row in series {
            values.extend_from_slice(&row[from..from + len]);
        }
        let truth_label = labels.map_or(0, |ls| {
            u8::from(ls.iter().any(|l| l[from..from + len].contains(&1)))
        });
        out.push(WindowFrame {
            stream_id: stream_id.to_string(),
            start_index: start_slot + from as u64,
            channels: n,
            len,
            values,
            truth_label,
        });
    }
    Ok(out)
}

/// Incremental windower for one stream: keeps only the last `len` aligned
/// samples and emits a window every `stride` samples once full.
#[derive(Debug, Clone)]
pub struct OnlineWindower {
    stream_id: String,
    channels: usize,
    len: usize,
    stride: usize,
    buf: VecDeque<(Vec<f64>, u8)>,
    next_slot: u64,
    since_emit: usize,
}

impl OnlineWindower {
    pub fn new(stream_id: &str, channels: usize, len: usize, stride: usize, first_slot: u64) -> Self {
        OnlineWindower {
            stream_id: stream_id.to_string(),
            channels,
            len,
            stride,
            buf: VecDeque::with_capacity(len),
            next_slot: first_slot,
            since_emit: 0,
        }
    }

    /// Pushes one aligned sample (one value per channel).
    pub fn push(&mut self, sample: &[f64], label: u8) -> Result<Option<WindowFrame>> {
        if sample.len() != self.channels {
            return Err(Error::dim(self.channels, sample.len(), "online sample width"));
        }
        if self.buf.len() == self.len {
            // reuse the evicted allocation
            let (mut old, _) = self.buf.pop_front().expect("full buffer");
            old.clear();
            old.extend_from_slice(sample);
            self.buf.push_back((old, label));
        } else {
            self.buf.push_back((sample.to_vec(), label));
        }
        self.next_slot += 1;
        if self.buf.len() < self.len {
            return Ok(None);
        }
        let due = self.since_emit.is_multiple_of(self.stride);
        self.since_emit += 1;
        if !due {
            return Ok(None);
        }
        let mut values = Vec::with_capacity(self.channels * self.len);
        for ch in 0..self.channels {
            values.extend(self.buf.iter().map(|(s, _)| s[ch]));
        }
        Ok(Some(WindowFrame {
            stream_id: self.stream_id.clone(),
            start_index: self.next_slot - self.len as u64,
            channels: self.channels,
            len: self.len,
            values,
            truth_label: u8::from(self.buf.iter().any(|(_, l)| *l == 1)),
        }))
    }

    /// Bytes held by the sample buffer.
    pub fn state_bytes(&self) -> usize {
        self.buf.capacity() * std::mem::size_of::<(Vec<f64>, u8)>()
            + self
                .buf
                .iter()
                .map(|(s, _)| s.capacity() * std::mem::size_of::<f64>())
                .sum::<usize>()
    }
}

/// Streams in first-appearance order, each with channels in first-appearance
/// order.
pub fn infer_schemas(readings: &[SensorReading], sample_period_ms: u64) -> Vec<StreamSchema> {
    let mut order: Vec<StreamSchema> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for r in readings {
        let i = *index.entry(r.stream_id.as_str()).or_insert_with(|| {
            order.push(StreamSchema {
                stream_id: r.stream_id.clone(),
                channels: Vec::new(),
                sample_period_ms,
            });
            order.len() - 1
        });
        if !order[i].channels.contains(&r.channel_id) {
            order[i].channels.push(r.channel_id.clone());
        }
    }
    order
}

/// Splits readings by stream, preserving input order within each stream.
pub fn group_by_stream(readings: &[SensorReading]) -> HashMap<String, Vec<SensorReading>> {
    let mut out: HashMap<String, Vec<SensorReading>> = HashMap::new();
    for r in readings {
        out.entry(r.stream_id.clone()).or_default().push(r.clone());
    }
    out
}

pub fn parse_line(line: &str) -> Result<SensorReading> {
    let reading: SensorReading =
        serde_json::from_str(line).map_err(|e| Error::Data(e.to_string()))?;
    reading.validate()?;
    Ok(reading)
}

/// Reads newline-delimited telemetry. Blank lines are skipped. Any malformed
/// line fails the whole read with line-numbered diagnostics.
pub fn read_telemetry<R: BufRead>(reader: R) -> Result<Vec<SensorReading>> {
    const MAX_REPORTED: usize = 20;
    let mut out = Vec::new();
    let mut problems = Vec::new();
    let mut bad = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(r) => out.push(r),
            Err(e) => {
                bad += 1;
                if problems.len() < MAX_REPORTED {
                    problems.push(format!("line {}: {e}", i + 1));
                }
            }
        }
    }
    if bad > 0 {
        let mut msg = problems.join("; ");
        if bad > MAX_REPORTED {
            msg.push_str(&format!("; ... {} more malformed lines", bad - MAX_REPORTED));
        }
        return Err(Error::Data(msg));
    }
    Ok(out)
}

pub fn write_telemetry<W: Write>(mut w: W, readings: &[SensorReading]) -> std::io::Result<()> {
    for r in readings {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
