//! Deterministic synthetic telemetry with labelled fault injection.
//!
//! Signal models (t = sample index, P = cycle length in samples, φ a seeded
//! per-stream phase, ε ~ N(0, 1) from each channel's own substream,
//! s = `noise_scale`):
//!
//! | scenario   | channel      | value                                                    |
//! |------------|--------------|----------------------------------------------------------|
//! | smartgrid  | `voltage`    | `V = 230·(1 + 0.01·sin(2πt/P + φ)) + 2.3·s·ε_V`           |
//! | smartgrid  | `current`    | `10 − (10/230)·(V − 230) + 0.05·s·ε_I`                     |
//! | healthcare | `heart_rate` | `75 + 10·sin(2πt/P + φ) + 2·s·ε`                          |
//! | healthcare | `spo2`       | `min(100, 97.5 − 1·sin(2πt/P + φ) + 0.4·s·ε)`             |
//!
//! Current is the linearised response of a 2.3 kW constant-power load to the
//! line voltage, fluctuations included, plus its own meter noise. Oxygen
//! saturation dips as heart rate climbs. The channel noise σ used to scale
//! injected anomalies is the standard deviation of a channel's noise terms
//! (`2.3·s`, `√(0.1² + 0.05²)·s`, `2·s`, `0.4·s`), or its value at `s = 1`
//! when `s = 0`.
//!
//! Substreams are keyed by `(seed, stream_id, channel_id)`; see [`crate::rng`].

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::telemetry::{SensorReading, StreamSchema, DEFAULT_SAMPLE_PERIOD_MS};

/// dI/dV of the smart-grid load, A/V.
const LOAD_GAIN: f64 = 10.0 / 230.0;
/// Current meter noise, A.
const METER_NOISE_A: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Smartgrid,
    Healthcare,
}

impl ScenarioKind {
    pub fn channels(&self) -> &'static [&'static str] {
        match self {
            ScenarioKind::Smartgrid => &["voltage", "current"],
            ScenarioKind::Healthcare => &["heart_rate", "spo2"],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Smartgrid => "smartgrid",
            ScenarioKind::Healthcare => "healthcare",
        }
    }

    /// Configured mean level of a channel.
    pub fn baseline(&self, channel: &str) -> Option<f64> {
        match (self, channel) {
            (ScenarioKind::Smartgrid, "voltage") => Some(230.0),
            (ScenarioKind::Smartgrid, "current") => Some(10.0),
            (ScenarioKind::Healthcare, "heart_rate") => Some(75.0),
            (ScenarioKind::Healthcare, "spo2") => Some(97.5),
            _ => None,
        }
    }

    fn noise_coefficient(&self, channel: &str) -> Option<f64> {
        match (self, channel) {
            (ScenarioKind::Smartgrid, "voltage") => Some(2.3),
            (ScenarioKind::Smartgrid, "current") => Some((LOAD_GAIN * 2.3f64).hypot(METER_NOISE_A)),
            (ScenarioKind::Healthcare, "heart_rate") => Some(2.0),
            (ScenarioKind::Healthcare, "spo2") => Some(0.4),
            _ => None,
        }
    }

    /// Noise σ of a channel at the given noise scale.
    pub fn channel_sigma(&self, channel: &str, noise_scale: f64) -> Option<f64> {
        let c = self.noise_coefficient(channel)?;
        Some(if noise_scale > 0.0 { c * noise_scale } else { c })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub streams: usize,
    pub duration_s: u64,
    #[serde(default = "default_period")]
    pub sample_period_ms: u64,
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    /// Period of the slow sinusoid, seconds.
    #[serde(default = "default_cycle")]
    pub cycle_s: u64,
    /// Timestamp of sample 0.
    #[serde(default)]
    pub start_ts_ms: u64,
}

fn default_period() -> u64 {
    DEFAULT_SAMPLE_PERIOD_MS
}
fn default_noise() -> f64 {
    1.0
}
fn default_cycle() -> u64 {
    600
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Smartgrid,
            streams: 1,
            duration_s: 3600,
            sample_period_ms: default_period(),
            seed: 0,
            noise_scale: default_noise(),
            cycle_s: default_cycle(),
            start_ts_ms: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.streams == 0 {
            return Err(Error::Parameter("scenario.streams must be >= 1".into()));
        }
        if self.sample_period_ms == 0 {
            return Err(Error::Parameter("scenario.sample_period_ms must be > 0".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Parameter("scenario.noise_scale must be a finite value >= 0".into()));
        }
        if self.cycle_s == 0 {
            return Err(Error::Parameter("scenario.cycle_s must be > 0".into()));
        }
        Ok(())
    }

    pub fn samples_per_stream(&self) -> usize {
        (self.duration_s * 1000 / self.sample_period_ms) as usize
    }

    pub fn stream_id(&self, i: usize) -> String {
        format!("{}-{i:03}", self.kind.name())
    }

    pub fn schemas(&self) -> Vec<StreamSchema> {
        (0..self.streams)
            .map(|i| StreamSchema {
                stream_id: self.stream_id(i),
                channels: self.kind.channels().iter().map(|c| c.to_string()).collect(),
                sample_period_ms: self.sample_period_ms,
            })
            .collect()
    }

    pub fn ts_of(&self, index: usize) -> u64 {
        self.start_ts_ms + index as u64 * self.sample_period_ms
    }

    pub fn sigma(&self, channel: &str) -> Result<f64> {
        self.kind
            .channel_sigma(channel, self.noise_scale)
            .ok_or_else(|| Error::Schema(format!("{} has no channel {channel}", self.kind.name())))
    }
}

fn clean_series(spec: &ScenarioSpec, stream_id: &str) -> Vec<Vec<f64>> {
    let n = spec.samples_per_stream();
    let mut phase_rng = rng::substream(spec.seed, &[stream_id, "phase"]);
    let phase: f64 = phase_rng.gen_range(0.0..2.0 * PI);
    let cycle = (spec.cycle_s * 1000) as f64 / spec.sample_period_ms as f64;
    let s = spec.noise_scale;
    let channels = spec.kind.channels();
    let eps: Vec<Vec<f64>> = channels
        .iter()
        .map(|ch| {
            let mut r = rng::substream(spec.seed, &[stream_id, ch]);
            (0..n).map(|_| r.sample(StandardNormal)).collect()
        })
        .collect();
    let wave: Vec<f64> = (0..n).map(|t| (2.0 * PI * t as f64 / cycle + phase).sin()).collect();
    match spec.kind {
        ScenarioKind::Smartgrid => {
            let voltage: Vec<f64> = (0..n).map(|t| 230.0 * (1.0 + 0.01 * wave[t]) + 2.3 * s * eps[0][t]).collect();
            let current = (0..n)
                .map(|t| 10.0 - LOAD_GAIN * (voltage[t] - 230.0) + METER_NOISE_A * s * eps[1][t])
                .collect();
            vec![voltage, current]
        }
        ScenarioKind::Healthcare => {
            let hr = (0..n).map(|t| 75.0 + 10.0 * wave[t] + 2.0 * s * eps[0][t]).collect();
            let spo2 = (0..n).map(|t| (97.5 - wave[t] + 0.4 * s * eps[1][t]).min(100.0)).collect();
            vec![hr, spo2]
        }
    }
}

/// Clean readings (all labelled 0) ordered by time, then stream, then channel.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(Vec<SensorReading>, Vec<StreamSchema>)> {
    spec.validate()?;
    let schemas = spec.schemas();
    let series: Vec<Vec<Vec<f64>>> = schemas.iter().map(|s| clean_series(spec, &s.stream_id)).collect();
    let n = spec.samples_per_stream();
    let mut out = Vec::with_capacity(n * schemas.len() * spec.kind.channels().len());
    for t in 0..n {
        for (schema, chans) in schemas.iter().zip(&series) {
            for (ch, values) in schema.channels.iter().zip(chans) {
                out.push(SensorReading {
                    timestamp_ms: spec.ts_of(t),
                    stream_id: schema.stream_id.clone(),
                    channel_id: ch.clone(),
                    value: values[t],
                    truth_label: Some(0),
                });
            }
        }
    }
    Ok((out, schemas))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Spike,
    Drift,
    Dropout,
    Stuck,
    Spoof,
    DosBurst,
}

impl AnomalyKind {
    pub fn is_stream_wide(&self) -> bool {
        matches!(self, AnomalyKind::Dropout | AnomalyKind::DosBurst)
    }
}

/// One injected fault.
///
/// Effects on covered samples `start_index .. start_index + duration`:
/// * `spike`: adds `magnitude·σ`.
/// * `drift`: adds a ramp reaching `magnitude·σ` at the last sample
///   (`magnitude·σ·(j+1)/duration` at offset `j`).
/// * `stuck`: holds the last value before the event.
/// * `spoof`: replays the channel's own values from `duration` samples earlier,
///   shifted by `magnitude·σ`.
/// * `dropout`: removes every reading of the stream.
/// * `dos_burst`: each reading is emitted `round(magnitude)` times with the
///   same timestamp; the copies carry `N(0, σ)` jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyEvent {
    pub kind: AnomalyKind,
    pub stream_id: String,
    #[serde(default)]
    pub channels: Vec<String>,
    pub start_index: usize,
    pub duration: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventLogEntry {
    Event {
        index: usize,
        kind: AnomalyKind,
        stream: String,
        channels: Vec<String>,
        start_index: usize,
        duration: usize,
        magnitude: f64,
        start_ts: u64,
        end_ts: u64,
        removed: usize,
        duplicated: usize,
    },
    /// A reading removed by a dropout.
    Hole {
        event: usize,
        stream: String,
        channel: String,
        ts: u64,
        sample_index: usize,
        label: u8,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injected {
    pub readings: Vec<SensorReading>,
    pub log: Vec<EventLogEntry>,
}

struct ChannelTrack {
    values: Vec<f64>,
    present: Vec<bool>,
    labels: Vec<u8>,
    extra: Vec<Vec<f64>>,
}

/// Applies events in order (later events win on overlapping samples).
///
/// Expects the readings of [`generate_scenario`] for the same `spec`: one
/// reading per stream, channel and sample index.
pub fn inject_anomalies(
    readings: &[SensorReading],
    schemas: &[StreamSchema],
    events: &[AnomalyEvent],
    spec: &ScenarioSpec,
) -> Result<Injected> {
    let n = spec.samples_per_stream();
    let mut tracks: HashMap<(String, String), ChannelTrack> = HashMap::new();
    for s in schemas {
        for c in &s.channels {
            tracks.insert(
                (s.stream_id.clone(), c.clone()),
                ChannelTrack {
                    values: vec![0.0; n],
                    present: vec![false; n],
                    labels: vec![0; n],
                    extra: vec![Vec::new(); n],
                },
            );
        }
    }
    for r in readings {
        let idx = r
            .timestamp_ms
            .checked_sub(spec.start_ts_ms)
            .map(|d| (d / spec.sample_period_ms) as usize)
            .filter(|&i| i < n)
            .ok_or_else(|| Error::Range(format!("reading at ts={} lies outside the scenario", r.timestamp_ms)))?;
        let track = tracks
            .get_mut(&(r.stream_id.clone(), r.channel_id.clone()))
            .ok_or_else(|| Error::Schema(format!("unknown stream/channel {}/{}", r.stream_id, r.channel_id)))?;
        track.values[idx] = r.value;
        track.present[idx] = true;
        track.labels[idx] = r.truth_label.unwrap_or(0);
    }

    let mut log = Vec::new();
    let mut holes = Vec::new();
    for (ei, ev) in events.iter().enumerate() {
        let schema = schemas
            .iter()
            .find(|s| s.stream_id == ev.stream_id)
            .ok_or_else(|| Error::Range(format!("event {ei} ({:?}) names unknown stream {}", ev.kind, ev.stream_id)))?;
        if ev.duration == 0 || ev.start_index + ev.duration > n {
            return Err(Error::Range(format!(
                "event {ei} ({:?} on {}) covers samples {}..{} but the scenario has {n}",
                ev.kind,
                ev.stream_id,
                ev.start_index,
                ev.start_index + ev.duration
            )));
        }
        if !ev.magnitude.is_finite() {
            return Err(Error::Parameter(format!("event {ei} has non-finite magnitude")));
        }
        let channels: Vec<String> = if ev.kind.is_stream_wide() || ev.channels.is_empty() {
            if !ev.kind.is_stream_wide() {
                return Err(Error::Parameter(format!("event {ei} ({:?}) lists no channels", ev.kind)));
            }
            schema.channels.clone()
        } else {
            for c in &ev.channels {
                if !schema.channels.contains(c) {
                    return Err(Error::Range(format!("event {ei} names unknown channel {c} on {}", ev.stream_id)));
                }
            }
            ev.channels.clone()
        };
        let range = ev.start_index..ev.start_index + ev.duration;
        let mut removed = 0;
        let mut duplicated = 0;
        for ch in &channels {
            let sigma = spec.sigma(ch)?;
            let track = tracks.get_mut(&(ev.stream_id.clone(), ch.clone())).expect("schema channel");
            match ev.kind {
                AnomalyKind::Spike => {
                    for i in range.clone() {
                        track.values[i] += ev.magnitude * sigma;
                    }
                }
                AnomalyKind::Drift => {
                    for (j, i) in range.clone().enumerate() {
                        track.values[i] += ev.magnitude * sigma * (j + 1) as f64 / ev.duration as f64;
                    }
                }
                AnomalyKind::Stuck => {
                    let hold = track.values[ev.start_index.saturating_sub(1)];
                    for i in range.clone() {
                        track.values[i] = hold;
                    }
                }
                AnomalyKind::Spoof => {
                    let offset = ev.magnitude * sigma;
                    let replay: Vec<f64> = range
                        .clone()
                        .map(|i| {
                            let src = i.checked_sub(ev.duration).unwrap_or(i);
                            track.values[src] + offset
                        })
                        .collect();
                    for (i, v) in range.clone().zip(replay) {
                        track.values[i] = v;
                    }
                }
                AnomalyKind::Dropout => {
                    for i in range.clone() {
                        if track.present[i] {
                            removed += 1 + track.extra[i].len();
                            track.present[i] = false;
                            track.extra[i].clear();
                            holes.push(EventLogEntry::Hole {
                                event: ei,
                                stream: ev.stream_id.clone(),
                                channel: ch.clone(),
                                ts: spec.ts_of(i),
                                sample_index: i,
                                label: 1,
                            });
                        }
                    }
                }
                AnomalyKind::DosBurst => {
                    let copies = ev.magnitude.round().max(1.0) as usize - 1;
                    let mut r = rng::substream(spec.seed, &[&ev.stream_id, ch, "dos", &ei.to_string()]);
                    for i in range.clone() {
                        if !track.present[i] {
                            continue;
                        }
                        for _ in 0..copies {
                            let e: f64 = r.sample(StandardNormal);
                            track.extra[i].push(track.values[i] + sigma * e);
                        }
                        duplicated += copies;
                    }
                }
            }
            for i in range.clone() {
                track.labels[i] = 1;
            }
        }
        log.push(EventLogEntry::Event {
            index: ei,
            kind: ev.kind,
            stream: ev.stream_id.clone(),
            channels,
            start_index: ev.start_index,
            duration: ev.duration,
            magnitude: ev.magnitude,
            start_ts: spec.ts_of(ev.start_index),
            end_ts: spec.ts_of(ev.start_index + ev.duration - 1),
            removed,
            duplicated,
        });
    }
    log.extend(holes);

    let mut out = Vec::with_capacity(readings.len());
    for t in 0..n {
        for s in schemas {
            for c in &s.channels {
                let track = &tracks[&(s.stream_id.clone(), c.clone())];
                if !track.present[t] {
                    continue;
                }
                let mk = |value: f64| SensorReading {
                    timestamp_ms: spec.ts_of(t),
                    stream_id: s.stream_id.clone(),
                    channel_id: c.clone(),
                    value,
                    truth_label: Some(track.labels[t]),
                };
                out.push(mk(track.values[t]));
                out.extend(track.extra[t].iter().map(|&v| mk(v)));
            }
        }
    }
    Ok(Injected { readings: out, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkEffects {
    pub loss_prob: f64,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub jitter_ms: u64,
    pub seed: u64,
}

impl NetworkEffects {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(Error::Parameter(format!("network.loss_prob {} outside [0, 1]", self.loss_prob)));
        }
        Ok(())
    }

    /// The generator that decides the fate of one reading. Its identity is
    /// `(stream, channel, ts, occurrence)` where `occurrence` counts earlier
    /// readings with the same stream, channel and timestamp.
    pub fn reading_rng(&self, r: &SensorReading, occurrence: usize) -> rng::Pcg64 {
        rng::substream(
            self.seed,
            &[
                "net",
                &r.stream_id,
                &r.channel_id,
                &r.timestamp_ms.to_string(),
                &occurrence.to_string(),
            ],
        )
    }
}

/// Drops each reading with probability `loss_prob` (first uniform draw of its
/// generator) and delays survivors by `latency_ms + U{0..=jitter_ms}` (second
/// draw). Output is stably sorted by the new timestamps.
pub fn apply_network_effects(readings: &[SensorReading], fx: &NetworkEffects) -> Result<Vec<SensorReading>> {
    fx.validate()?;
    let mut seen: HashMap<(&str, &str, u64), usize> = HashMap::new();
    let mut out = Vec::with_capacity(readings.len());
    for r in readings {
        let occ = seen
            .entry((r.stream_id.as_str(), r.channel_id.as_str(), r.timestamp_ms))
            .or_insert(0);
        let mut g = fx.reading_rng(r, *occ);
        *occ += 1;
        let u: f64 = g.gen();
        if u < fx.loss_prob {
            continue;
        }
        let jitter = if fx.jitter_ms > 0 { g.gen_range(0..=fx.jitter_ms) } else { 0 };
        let mut moved = r.clone();
        moved.timestamp_ms += fx.latency_ms + jitter;
        out.push(moved);
    }
    out.sort_by_key(|r| r.timestamp_ms);
    Ok(out)
}

/// Seeded placement of random events, used for benchmark scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventPlan {
    pub per_stream: usize,
    pub kinds: Vec<AnomalyKind>,
    /// Inclusive magnitude range, in σ (or rate multiples for `dos_burst`).
    pub magnitude: [f64; 2],
    /// Inclusive duration range, in samples.
    pub duration: [usize; 2],
    /// No event starts before this many seconds into the scenario.
    #[serde(default)]
    pub warmup_s: u64,
}

/// Events for every stream: the post-warmup span is cut into `per_stream`
/// equal slots and one event is placed uniformly inside each slot, leaving a
/// quarter-slot margin at both ends so events never touch. Kinds rotate
/// through `plan.kinds`; the channel of a single-channel event is drawn
/// uniformly.
pub fn plan_events(spec: &ScenarioSpec, plan: &EventPlan) -> Result<Vec<AnomalyEvent>> {
    if plan.per_stream == 0 {
        return Ok(Vec::new());
    }
    if plan.kinds.is_empty() {
        return Err(Error::Parameter("event plan lists no kinds".into()));
    }
    let [dmin, dmax] = plan.duration;
    let [mmin, mmax] = plan.magnitude;
    if dmin == 0 || dmin > dmax || mmin.is_nan() || mmax.is_nan() || mmin > mmax {
        return Err(Error::Parameter("event plan ranges must be non-empty with duration >= 1".into()));
    }
    let n = spec.samples_per_stream();
    let warm = (plan.warmup_s * 1000 / spec.sample_period_ms) as usize;
    let span = n.saturating_sub(warm);
    let slot = span / plan.per_stream;
    let margin = slot / 4;
    if slot < dmax + 2 * margin || slot == 0 {
        return Err(Error::Range(format!(
            "{} events of up to {dmax} samples do not fit into {span} post-warmup samples",
            plan.per_stream
        )));
    }
    let channels = spec.kind.channels();
    let mut out = Vec::new();
    for si in 0..spec.streams {
        let stream = spec.stream_id(si);
        let mut r = rng::substream(spec.seed, &[&stream, "events"]);
        for j in 0..plan.per_stream {
            let kind = plan.kinds[(si * plan.per_stream + j) % plan.kinds.len()];
            let duration = r.gen_range(dmin..=dmax);
            let magnitude = if mmin == mmax { mmin } else { r.gen_range(mmin..=mmax) };
            let lo = warm + j * slot + margin;
            let hi = warm + (j + 1) * slot - margin - duration;
            let start_index = r.gen_range(lo..=hi);
            let channel = channels[r.gen_range(0..channels.len())];
            out.push(AnomalyEvent {
                kind,
                stream_id: stream.clone(),
                channels: if kind.is_stream_wide() { Vec::new() } else { vec![channel.to_string()] },
                start_index,
                duration,
                magnitude,
            });
        }
    }
    Ok(out)
}
