mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use proplab_core::events::Split;

use crate::config::Metric;
use crate::error::{CliError, CliResult};

/// Calibrate, simulate and diagnose propagator models of price impact.
#[derive(Debug, Parser)]
#[command(name = "proplab", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean and label raw trades into the canonical event CSV.
    Ingest(IngestArgs),
    /// Generate a synthetic labelled flow with known model returns.
    Synth(SynthArgs),
    /// Calibrate models and write one JSON file per model.
    Calibrate(CalibrateArgs),
    /// Run calibrated models on a flow and write predicted returns.
    Simulate(SimulateArgs),
    /// Simulate models and compute diagnostics for data and predictions.
    Diagnose(DiagnoseArgs),
    /// Summarise the JSON outputs of a directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Raw trades CSV (timestamp_ms, price, bid, ask, volume, flags).
    #[arg(long)]
    input: PathBuf,
    /// Canonical event CSV to write.
    #[arg(long)]
    output: PathBuf,
    /// Summary JSON; defaults to the output path with a `.json` extension.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    instrument: Option<String>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth model JSON; defaults to the configured model.
    #[arg(long)]
    generator: Option<PathBuf>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    events_per_day: Option<usize>,
    #[arg(long)]
    sign_memory: Option<f64>,
}

/// Options shared by commands that read a canonical event file.
#[derive(Debug, Args)]
struct FlowArgs {
    /// Canonical event CSV.
    #[arg(long)]
    input: PathBuf,
    /// Instrument identifier; defaults to the input file stem.
    #[arg(long)]
    instrument: Option<String>,
    /// Day subset by position: odd, even or none.
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    flow: FlowArgs,
    #[arg(long)]
    out_dir: PathBuf,
    /// Model kinds, comma separated: tim1, tim2, hdim2, hdim2star, cim2 or all.
    #[arg(long, default_value = "all")]
    model: String,
    #[arg(long)]
    max_lag: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    flow: FlowArgs,
    /// Directory holding `<kind>.json` model files.
    #[arg(long)]
    model_dir: PathBuf,
    #[arg(long, default_value = "all")]
    model: String,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    flow: FlowArgs,
    #[arg(long)]
    model_dir: PathBuf,
    #[arg(long, default_value = "all")]
    model: String,
    /// Directory for diagnostic CSV and JSON files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Diagnostics to compute; all by default.
    #[arg(long, value_delimiter = ',')]
    metric: Vec<Metric>,
    /// Bin sizes in trades, comma separated.
    #[arg(long = "N", value_delimiter = ',')]
    n_values: Vec<usize>,
    /// Number of imbalance bins per impact curve.
    #[arg(long)]
    bins: Option<usize>,
    /// Largest lag of signature plots, responses and biases.
    #[arg(long)]
    max_lag: Option<usize>,
    /// Also write whitespace-separated `.dat` files for plotting.
    #[arg(long)]
    plot_data: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Output directory of `calibrate` or `diagnose`.
    #[arg(long)]
    dir: PathBuf,
    /// Markdown file to write instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: proplab_core::Error| e.to_string())
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("PROPLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("PROPLAB_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    let mut cfg = config::RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed.or(cfg.seed) {
        cfg.synth.seed = seed;
    }
    match cli.command {
        Command::Ingest(a) => {
            if let Some(id) = a.instrument {
                cfg.ingest.instrument_id = id;
            }
            commands::ingest(&cfg, &a.input, &a.output, a.summary.as_deref())
        }
        Command::Synth(a) => {
            if let Some(d) = a.days {
                cfg.synth.days = d;
            }
            if let Some(n) = a.events_per_day {
                cfg.synth.events_per_day = n;
            }
            if let Some(h) = a.sign_memory {
                cfg.synth.sign_memory = h;
            }
            commands::synth(&mut cfg, &a.output, a.generator.as_deref())
        }
        Command::Calibrate(a) => {
            if a.max_lag.is_some() {
                cfg.calibration.max_lag = a.max_lag;
            }
            let flow = commands::load_flow(&a.flow.input, a.flow.instrument.as_deref())?;
            let kinds = commands::parse_models(&a.model)?;
            commands::calibrate(&cfg, &flow, a.flow.split.unwrap_or(Split::None), &kinds, &a.out_dir)
        }
        Command::Simulate(a) => {
            let flow = commands::load_flow(&a.flow.input, a.flow.instrument.as_deref())?;
            let kinds = commands::parse_models(&a.model)?;
            commands::simulate(&flow, a.flow.split, &a.model_dir, &kinds, &a.output)
        }
        Command::Diagnose(a) => {
            let d = &mut cfg.diagnose;
            if !a.metric.is_empty() {
                d.metrics = a.metric;
            }
            if !a.n_values.is_empty() {
                d.n_values = a.n_values;
            }
            if let Some(b) = a.bins {
                d.bins = b;
            }
            if let Some(l) = a.max_lag {
                d.max_lag = l;
            }
            d.plot_data |= a.plot_data;
            let flow = commands::load_flow(&a.flow.input, a.flow.instrument.as_deref())?;
            let kinds = commands::parse_models(&a.model)?;
            commands::diagnose(&cfg, &flow, a.flow.split, &a.model_dir, &kinds, &a.out_dir)
        }
        Command::Report(a) => commands::report(&a.dir, a.output.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
