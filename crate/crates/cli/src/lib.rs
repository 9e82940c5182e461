//! Orchestration of the detection pipeline as file-to-file commands.
//!
//! `simulate` writes telemetry, `calibrate` turns clean telemetry into a model
//! artifact, `detect` scores telemetry against it, and `evaluate` joins the
//! decisions with window truth. `bench` measures throughput and
//! `explain-dump` exports full attribution matrices.
//!
//! Every output except the per-command manifest and `latency.json` is a pure
//! function of the configuration, so reruns reproduce their digests.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod manifest;
pub mod streams;

use std::path::{Path, PathBuf};

pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};

/// Paths produced by [`run_all`].
#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub telemetry: PathBuf,
    pub events: PathBuf,
    pub model: PathBuf,
    pub decisions: PathBuf,
    pub explanations: PathBuf,
    pub metrics: PathBuf,
    pub dir: PathBuf,
}

/// simulate → calibrate → detect → evaluate into one directory.
pub fn run_all(cfg: &RunConfig, out_dir: &Path) -> CliResult<(PipelineOutputs, commands::evaluate::Evaluation)> {
    let sim = commands::simulate::run(cfg, out_dir)?;
    let model = commands::calibrate::run(cfg, &sim.telemetry, out_dir)?;
    let det = commands::detect::run(cfg, &model, &sim.telemetry, out_dir)?;
    let (metrics, ev) = commands::evaluate::run(cfg, &det.decisions, &sim.telemetry, out_dir)?;
    Ok((
        PipelineOutputs {
            telemetry: sim.telemetry,
            events: sim.events,
            model,
            decisions: det.decisions,
            explanations: det.explanations,
            metrics,
            dir: out_dir.to_path_buf(),
        },
        ev,
    ))
}
