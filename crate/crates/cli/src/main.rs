use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctxscope::commands::{bench, calibrate, detect, evaluate, explain_dump, simulate};
use ctxscope::{CliResult, RunConfig};
use ctxscope_core::pipeline::ScorerKind;
use ctxscope_core::simgen::ScenarioKind;

#[derive(Parser, Debug)]
#[command(name = "ctxscope", version, about = "Contextual anomaly detection for multichannel telemetry")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override fields of the config document.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Telemetry file (defaults to <out-dir>/telemetry.jsonl).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Model artifact (defaults to <out-dir>/model.json).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_scorer)]
    scorer: Option<ScorerKind>,
    #[arg(long, global = true, value_parser = parse_kind)]
    kind: Option<ScenarioKind>,
    #[arg(long, global = true)]
    streams: Option<usize>,
    #[arg(long, global = true)]
    duration_s: Option<u64>,
    #[arg(long, global = true)]
    noise_scale: Option<f64>,
    #[arg(long, global = true)]
    window_len: Option<usize>,
    #[arg(long, global = true)]
    stride: Option<usize>,
    #[arg(long, global = true)]
    max_gap: Option<usize>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    context_len: Option<usize>,
    #[arg(long, global = true)]
    quantile: Option<f64>,
    #[arg(long, global = true)]
    band_sigmas: Option<f64>,
    #[arg(long, global = true)]
    rate_sigmas: Option<f64>,
    #[arg(long, global = true)]
    warmup_s: Option<u64>,
    #[arg(long, global = true)]
    emit_from_s: Option<u64>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true)]
    bench_streams: Option<usize>,
    #[arg(long, global = true)]
    bench_windows: Option<usize>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scenario with injected events.
    Simulate,
    /// Fit the model artifact on clean telemetry.
    Calibrate,
    /// Score telemetry; write decisions, explanations and latency.
    Detect,
    /// Join decisions with truth; write metrics, ROC and score timelines.
    Evaluate {
        /// Decisions file (defaults to <out-dir>/decisions.jsonl).
        #[arg(long)]
        decisions: Option<PathBuf>,
        /// Labelled telemetry or window truth records (defaults to --input).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Throughput and latency at low, medium and high stream counts.
    Bench,
    /// Full attribution matrices for flagged (or one chosen) window.
    ExplainDump {
        #[arg(long)]
        stream: Option<String>,
        #[arg(long)]
        window: Option<u64>,
    },
}

fn parse_scorer(s: &str) -> Result<ScorerKind, String> {
    s.parse().map_err(|e: ctxscope_core::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ScenarioKind, String> {
    match s {
        "smartgrid" => Ok(ScenarioKind::Smartgrid),
        "healthcare" => Ok(ScenarioKind::Healthcare),
        other => Err(format!("unknown scenario kind {other}")),
    }
}

fn build_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $($field:ident).+;)*) => {
            $(if let Some(v) = c.$flag.clone() { cfg.$($field).+ = v; })*
        };
    }
    set! {
        seed => seed;
        scorer => scorer;
        kind => scenario.kind;
        streams => scenario.streams;
        duration_s => scenario.duration_s;
        noise_scale => scenario.noise_scale;
        window_len => pipeline.window_len;
        stride => pipeline.stride;
        max_gap => pipeline.max_gap;
        dim => encoder.dim;
        context_len => encoder.context_len;
        quantile => pipeline.quantile;
        band_sigmas => pipeline.rules.band_sigmas;
        rate_sigmas => pipeline.rules.rate_sigmas;
        top_k => detect.top_k;
        bench_streams => bench.streams;
        bench_windows => bench.windows;
        threads => bench.threads;
    }
    if c.out_dir.is_some() {
        cfg.out_dir = c.out_dir.clone();
    }
    if c.input.is_some() {
        cfg.input = c.input.clone();
    }
    if c.model.is_some() {
        cfg.model = c.model.clone();
    }
    if c.warmup_s.is_some() {
        cfg.calibration.warmup_s = c.warmup_s;
    }
    if c.emit_from_s.is_some() {
        cfg.detect.emit_from_s = c.emit_from_s;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = build_config(&cli.common)?;
    let out = cfg.out_dir();
    let input = cfg.input.clone().unwrap_or_else(|| out.join(simulate::TELEMETRY_FILE));
    let model = cfg.model.clone().unwrap_or_else(|| out.join(ctxscope::artifact::MODEL_FILE));
    match &cli.command {
        Command::Simulate => {
            let o = simulate::run(&cfg, &out)?;
            println!("{}", o.telemetry.display());
        }
        Command::Calibrate => println!("{}", calibrate::run(&cfg, &input, &out)?.display()),
        Command::Detect => println!("{}", detect::run(&cfg, &model, &input, &out)?.decisions.display()),
        Command::Evaluate { decisions, truth } => {
            let decisions = decisions.clone().unwrap_or_else(|| out.join(detect::DECISIONS_FILE));
            let truth = truth.clone().unwrap_or(input);
            let (path, ev) = evaluate::run(&cfg, &decisions, &truth, &out)?;
            for (name, r) in &ev.report.detectors {
                let auc = r.auc.value().map_or("undefined".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{name:<12} auc={auc} f1={:.4} precision={:.4} recall={:.4} fpr={:.4}",
                    r.f1, r.precision, r.recall, r.fpr
                );
            }
            println!("{}", path.display());
        }
        Command::Bench => {
            let (path, report) = bench::run(&cfg, &out)?;
            for t in &report.tiers {
                println!(
                    "streams={:<6} windows={:<8} {:>10.0} win/s  p50={:.1}us p99={:.1}us  mem={} B",
                    t.streams,
                    t.total_windows,
                    t.windows_per_sec,
                    t.latency_ns.p50 / 1e3,
                    t.latency_ns.p99 / 1e3,
                    t.memory_estimate_bytes
                );
            }
            println!("{}", path.display());
        }
        Command::ExplainDump { stream, window } => {
            let sel = explain_dump::Selection {
                stream: stream.clone(),
                window: *window,
            };
            println!("{}", explain_dump::run(&cfg, &model, &input, &sel, &out)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ctxscope: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
