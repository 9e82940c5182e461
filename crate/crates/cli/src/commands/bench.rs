//! Throughput benchmark: S concurrent streams, each fed sample by sample
//! through the online windower and the full scoring path.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ctxscope_core::context;
use ctxscope_core::eval::{self, LatencyStats};
use ctxscope_core::pipeline::{self, StreamModel, StreamState};
use ctxscope_core::rng;
use ctxscope_core::simgen::{self, ScenarioSpec};
use ctxscope_core::telemetry::{self, OnlineWindower};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::files;
use crate::manifest::RunManifest;

pub const BENCH_FILE: &str = "bench.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTier {
    pub streams: usize,
    pub windows_per_stream: usize,
    pub total_windows: usize,
    pub elapsed_s: f64,
    pub windows_per_sec: f64,
    pub latency_ns: LatencyStats,
    /// Live per-stream state (windower ring + memory buffer + previous
    /// attended vector) summed over streams.
    pub stream_state_bytes: usize,
    /// Shared calibrated parameters.
    pub model_bytes: usize,
    /// `model_bytes + stream_state_bytes`.
    pub memory_estimate_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub dim: usize,
    pub channels: usize,
    pub window_len: usize,
    pub context_len: usize,
    pub threads: usize,
    pub tiers: Vec<BenchTier>,
    pub total_windows: usize,
    /// Memory estimate at 1000 streams over that at 100, when both tiers ran.
    pub memory_growth_100_to_1000: Option<f64>,
}

/// Low, medium and high load tiers for a peak of `streams`.
pub fn tiers(streams: usize) -> Vec<usize> {
    let mut t = vec![(streams / 10).max(1), (streams / 2).max(1), streams.max(1)];
    t.dedup();
    t
}

fn model_bytes(enc: &context::EncoderParams, m: &StreamModel) -> usize {
    let floats = enc.w_embed.data.len()
        + enc.b_embed.len()
        + enc.w_attn.data.len()
        + enc.u_attn.data.len()
        + enc.v_attn.len()
        + m.baseline.mu.len()
        + m.baseline.sigma.data.len()
        + m.baseline.sigma_inv.data.len()
        + m.baseline.sigma_chol.data.len()
        + m.residual.weights.data.len()
        + 2 * m.normalizer.bounds.len()
        + 4 * m.rules.rules.len();
    floats * std::mem::size_of::<f64>()
}

struct Lane {
    windower: OnlineWindower,
    state: StreamState,
}

pub fn run_bench(cfg: &RunConfig) -> CliResult<BenchReport> {
    let b = &cfg.bench;
    if b.streams == 0 || b.windows == 0 {
        return Err(CliError::Config("bench.streams and bench.windows must be >= 1".into()));
    }
    let p = &cfg.pipeline;
    let kind = cfg.scenario.kind;
    let period = cfg.scenario.sample_period_ms;
    let enc = context::init_params(cfg.encoder.dim, p.window_len, cfg.encoder.context_len, cfg.encoder_seed())?;

    // one shared model calibrated on an hour of clean data
    let cal_spec = ScenarioSpec {
        kind,
        streams: 1,
        duration_s: 3600,
        sample_period_ms: period,
        seed: rng::substream_seed(cfg.seed, &["bench", "calibration"]),
        ..ScenarioSpec::default()
    };
    let (cal, schemas) = simgen::generate_scenario(&cal_spec)?;
    let segs = telemetry::align_readings(&cal, &schemas[0], p.max_gap)?;
    let cal_windows = segs[0].windows(p.window_len, p.stride)?;
    let model = pipeline::calibrate(&[&cal_windows], &schemas[0].channels, &enc, p)?;
    let n_ch = model.channels.len();

    // samples for the peak tier; lower tiers use a prefix of the streams
    let peak = b.streams;
    let samples = p.window_len + (b.windows - 1) * p.stride;
    let spec = ScenarioSpec {
        kind,
        streams: peak,
        duration_s: (samples as u64 * period).div_ceil(1000),
        sample_period_ms: period,
        seed: rng::substream_seed(cfg.seed, &["bench", "load"]),
        ..ScenarioSpec::default()
    };
    let (readings, _) = simgen::generate_scenario(&spec)?;
    let per_t = peak * n_ch;
    let sample = |s: usize, t: usize| -> Vec<f64> {
        (0..n_ch).map(|c| readings[t * per_t + s * n_ch + c].value).collect()
    };
    let data: Vec<Vec<Vec<f64>>> = (0..peak).map(|s| (0..samples).map(|t| sample(s, t)).collect()).collect();

    let threads = if b.threads == 0 { rayon::current_num_threads() } else { b.threads };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("bench.threads: {e}")))?;
    let mbytes = model_bytes(&enc, &model);

    let mut out = Vec::new();
    for s in tiers(peak) {
        let mut lanes: Vec<Lane> = (0..s)
            .map(|i| Lane {
                windower: OnlineWindower::new(&format!("bench-{i:05}"), n_ch, p.window_len, p.stride, 0),
                state: StreamState::new(&enc),
            })
            .collect();
        let t0 = Instant::now();
        let lat: Vec<Vec<f64>> = pool.install(|| {
            lanes
                .par_iter_mut()
                .zip(&data[..s])
                .map(|(lane, series)| -> CliResult<Vec<f64>> {
                    let mut lat = Vec::with_capacity(b.windows);
                    for x in series {
                        let t = Instant::now();
                        if let Some(w) = lane.windower.push(x, 0)? {
                            lane.state.advance(&w, &enc, &model, p)?;
                            pipeline::rule_verdict(&w, &model)?;
                            lat.push(t.elapsed().as_nanos() as f64);
                        }
                    }
                    Ok(lat)
                })
                .collect::<CliResult<Vec<_>>>()
        })?;
        let elapsed = t0.elapsed().as_secs_f64();
        let lat: Vec<f64> = lat.into_iter().flatten().collect();
        let state: usize = lanes
            .iter()
            .map(|l| l.windower.state_bytes() + l.state.state_bytes())
            .sum();
        out.push(BenchTier {
            streams: s,
            windows_per_stream: b.windows,
            total_windows: lat.len(),
            elapsed_s: elapsed,
            windows_per_sec: lat.len() as f64 / elapsed.max(1e-12),
            latency_ns: eval::latency_stats(&lat)?,
            stream_state_bytes: state,
            model_bytes: mbytes,
            memory_estimate_bytes: mbytes + state,
        });
    }
    let at = |n: usize| out.iter().find(|t| t.streams == n).map(|t| t.memory_estimate_bytes as f64);
    let growth = at(100).zip(at(1000)).map(|(a, b)| b / a);
    Ok(BenchReport {
        dim: enc.dim,
        channels: n_ch,
        window_len: p.window_len,
        context_len: enc.context_len,
        threads,
        total_windows: out.iter().map(|t| t.total_windows).sum(),
        tiers: out,
        memory_growth_100_to_1000: growth,
    })
}

pub fn run(cfg: &RunConfig, out_dir: &Path) -> CliResult<(PathBuf, BenchReport)> {
    cfg.validate()?;
    let mut manifest = RunManifest::new("bench", cfg);
    let report = manifest.time("bench", || run_bench(cfg))?;
    files::create_dir(out_dir)?;
    let path = out_dir.join(BENCH_FILE);
    files::write_json(&path, &report)?;
    manifest.output(&path)?;
    manifest.write(out_dir)?;
    Ok((path, report))
}
