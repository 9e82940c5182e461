use std::path::{Path, PathBuf};

use ctxscope_core::simgen::{self, EventLogEntry};
use ctxscope_core::telemetry::SensorReading;

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::files;
use crate::manifest::RunManifest;

pub const TELEMETRY_FILE: &str = "telemetry.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";

pub struct Simulated {
    pub readings: Vec<SensorReading>,
    pub log: Vec<EventLogEntry>,
}

/// Generates the configured scenario, injects planned and listed events, then
/// applies network effects.
pub fn simulate(cfg: &RunConfig) -> CliResult<Simulated> {
    let spec = cfg.scenario_spec();
    let (clean, schemas) = simgen::generate_scenario(&spec)?;
    let mut events = match &cfg.events.plan {
        Some(plan) => simgen::plan_events(&spec, plan)?,
        None => Vec::new(),
    };
    events.extend(cfg.events.list.iter().cloned());
    let injected = simgen::inject_anomalies(&clean, &schemas, &events, &spec)?;
    let readings = match &cfg.network {
        Some(n) => simgen::apply_network_effects(&injected.readings, &cfg.network_effects(n))?,
        None => injected.readings,
    };
    Ok(Simulated {
        readings,
        log: injected.log,
    })
}

pub struct SimulateOutputs {
    pub telemetry: PathBuf,
    pub events: PathBuf,
    pub manifest: PathBuf,
}

pub fn run(cfg: &RunConfig, out_dir: &Path) -> CliResult<SimulateOutputs> {
    cfg.validate()?;
    let mut manifest = RunManifest::new("simulate", cfg);
    let sim = manifest.time("generate", || simulate(cfg))?;
    files::create_dir(out_dir)?;
    let telemetry = out_dir.join(TELEMETRY_FILE);
    let events = out_dir.join(EVENTS_FILE);
    manifest.time("write", || -> CliResult<()> {
        files::write_telemetry(&telemetry, &sim.readings)?;
        files::write_jsonl(&events, &sim.log)
    })?;
    manifest.output(&telemetry)?;
    manifest.output(&events)?;
    let manifest = manifest.write(out_dir)?;
    Ok(SimulateOutputs {
        telemetry,
        events,
        manifest,
    })
}
