use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ctxscope_core::context::{self, EncoderParams};
use ctxscope_core::pipeline::{self, StreamModel};
use ctxscope_core::telemetry::{SensorReading, WindowFrame};
use rayon::prelude::*;

use crate::artifact::{layout_key, ModelArtifact, FORMAT_VERSION, MODEL_FILE};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::files;
use crate::manifest::RunManifest;
use crate::streams::{self, StreamWindows};

/// Clean windows that end inside the warmup span, grouped by segment.
pub fn calibration_groups(sw: &StreamWindows, warmup_s: Option<u64>, window_len: usize) -> Vec<Vec<WindowFrame>> {
    let limit = warmup_s.map(|w| sw.slot_after(w));
    sw.segments
        .iter()
        .map(|seg| {
            seg.iter()
                .filter(|w| w.truth_label == 0)
                .filter(|w| limit.is_none_or(|l| w.start_index + window_len as u64 <= l))
                .cloned()
                .collect::<Vec<_>>()
        })
        .filter(|g| !g.is_empty())
        .collect()
}

pub fn calibrate_readings(cfg: &RunConfig, readings: &[SensorReading], input_sha256: String) -> CliResult<ModelArtifact> {
    let p = &cfg.pipeline;
    let period = cfg.calibration.sample_period_ms;
    let encoder: EncoderParams =
        context::init_params(cfg.encoder.dim, p.window_len, cfg.encoder.context_len, cfg.encoder_seed())?;
    let layouts = streams::inferred_layouts(readings, period);
    let windows = streams::window_streams(readings, &layouts, period, p)?;
    let groups: Vec<(String, Vec<String>, Vec<Vec<WindowFrame>>)> = windows
        .iter()
        .map(|sw| {
            (
                sw.stream_id.clone(),
                sw.channels.clone(),
                calibration_groups(sw, cfg.calibration.warmup_s, p.window_len),
            )
        })
        .collect();

    let fitted: Vec<(String, CliResult<StreamModel>)> = if cfg.calibration.per_stream {
        groups
            .par_iter()
            .map(|(id, ch, g)| {
                let refs: Vec<&[WindowFrame]> = g.iter().map(Vec::as_slice).collect();
                (id.clone(), pipeline::calibrate(&refs, ch, &encoder, p).map_err(CliError::from))
            })
            .collect()
    } else {
        Vec::new()
    };

    // pooled models per channel layout
    let mut pooled: BTreeMap<String, (Vec<String>, Vec<&[WindowFrame]>)> = BTreeMap::new();
    for (_, ch, g) in &groups {
        let e = pooled.entry(layout_key(ch)).or_insert_with(|| (ch.clone(), Vec::new()));
        e.1.extend(g.iter().map(Vec::as_slice));
    }
    let mut global = BTreeMap::new();
    let mut global_errors = BTreeMap::new();
    for (key, (ch, refs)) in pooled {
        match pipeline::calibrate(&refs, &ch, &encoder, p) {
            Ok(m) => {
                global.insert(key, m);
            }
            Err(e) => {
                global_errors.insert(key, CliError::from(e));
            }
        }
    }

    let mut per_stream = BTreeMap::new();
    for (id, res) in fitted {
        match res {
            Ok(m) => {
                per_stream.insert(id, m);
            }
            Err(e) => {
                let key = layout_key(&layouts[&id]);
                if !(cfg.calibration.global_fallback && global.contains_key(&key)) {
                    return Err(CliError::Calibration(format!("stream {id}: {e}")));
                }
            }
        }
    }
    if !cfg.calibration.per_stream {
        if let Some((key, e)) = global_errors.into_iter().next() {
            return Err(CliError::Calibration(format!("pooled model [{key}]: {e}")));
        }
    }
    if per_stream.is_empty() && global.is_empty() {
        return Err(CliError::Calibration(format!(
            "no calibratable windows: need at least {} clean windows",
            pipeline::min_calibration_windows(cfg.encoder.dim)
        )));
    }
    Ok(ModelArtifact {
        format_version: FORMAT_VERSION,
        seed: cfg.seed,
        scorer: cfg.scorer,
        pipeline: p.clone(),
        sample_period_ms: period,
        calibration_warmup_s: cfg.calibration.warmup_s,
        encoder,
        streams: per_stream,
        global,
        per_stream: cfg.calibration.per_stream,
        global_fallback: cfg.calibration.global_fallback,
        input_sha256,
    })
}

pub fn run(cfg: &RunConfig, input: &Path, out_dir: &Path) -> CliResult<PathBuf> {
    cfg.validate()?;
    let mut manifest = RunManifest::new("calibrate", cfg);
    manifest.input(input)?;
    let readings = manifest.time("read", || files::read_telemetry(input))?;
    let digest = manifest.inputs[0].sha256.clone();
    let artifact = manifest.time("calibrate", || calibrate_readings(cfg, &readings, digest))?;
    files::create_dir(out_dir)?;
    let path = out_dir.join(MODEL_FILE);
    artifact.save(&path)?;
    manifest.output(&path)?;
    manifest.write(out_dir)?;
    Ok(path)
}
