#![allow(dead_code)]

use ctxscope_core::context::{self, EncoderParams};
use ctxscope_core::pipeline::{self, PipelineConfig, StreamModel};
use ctxscope_core::simgen::{self, ScenarioKind, ScenarioSpec};
use ctxscope_core::telemetry::{self, WindowFrame};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

pub fn spec(kind: ScenarioKind, seed: u64, duration_s: u64) -> ScenarioSpec {
    ScenarioSpec {
        kind,
        streams: 1,
        duration_s,
        seed,
        ..ScenarioSpec::default()
    }
}

pub fn clean_windows(kind: ScenarioKind, seed: u64, duration_s: u64) -> (Vec<WindowFrame>, Vec<String>) {
    let spec = spec(kind, seed, duration_s);
    let (readings, schemas) = simgen::generate_scenario(&spec).unwrap();
    let segs = telemetry::align_readings(&readings, &schemas[0], 3).unwrap();
    assert_eq!(segs.len(), 1);
    (segs[0].windows(12, 1).unwrap(), schemas[0].channels.clone())
}

pub struct Fixture {
    pub encoder: EncoderParams,
    pub model: StreamModel,
    pub cfg: PipelineConfig,
}

/// One hour of clean telemetry, calibrated with default settings.
pub fn calibrated(kind: ScenarioKind, seed: u64) -> Fixture {
    let (windows, channels) = clean_windows(kind, seed, 3600);
    let encoder = context::init_params(16, 12, 8, seed ^ 0x5eed).unwrap();
    let cfg = PipelineConfig::default();
    let model = pipeline::calibrate(&[&windows], &channels, &encoder, &cfg).unwrap();
    Fixture { encoder, model, cfg }
}

/// Window with independent uniform samples spanning each channel's
/// calibration range plus 20% on either side.
pub fn random_window(model: &StreamModel, len: usize, start: u64, rng: &mut Pcg64) -> WindowFrame {
    let rows: Vec<Vec<f64>> = model
        .normalizer
        .bounds
        .iter()
        .map(|b| {
            let pad = 0.2 * (b.max - b.min);
            (0..len).map(|_| rng.gen_range(b.min - pad..b.max + pad)).collect()
        })
        .collect();
    WindowFrame::from_rows("random", start, &rows).unwrap()
}

pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}
