//! `hydrodispatch` command line. Every subcommand is a thin wrapper over a
//! library call; failures print `error: <code>: <message>` and exit 1,
//! usage errors exit 2.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hydrodispatch", version, about = "Hydropower unit dispatch from historical hydrology")]
pub struct Cli {
    /// Store file; created on first use.
    #[arg(long, global = true, default_value = "hydro.db")]
    pub db: PathBuf,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load CSV tables into the store. With no file flags a `#@` bundle is read from stdin.
    Ingest(IngestArgs),
    /// Write a synthetic two-plant cascade as a `#@` bundle.
    Synth(SynthArgs),
    /// Build, store and print unit efficiency curves.
    Efficiency(EfficiencyArgs),
    /// Lag scan and seasonal links between an upstream and a downstream plant.
    Lag(LagArgs),
    /// Train the unit-commitment models of one plant.
    Train(TrainArgs),
    /// Dispatch plants for a scenario and write the planning case.
    Dispatch(DispatchArgs),
    /// Rewrite the planning case of a saved dispatch manifest.
    Export(ExportArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub static_plants: Option<PathBuf>,
    #[arg(long)]
    pub static_units: Option<PathBuf>,
    #[arg(long)]
    pub plants: Option<PathBuf>,
    #[arg(long)]
    pub units: Option<PathBuf>,
    /// Bundle file; `-` reads stdin.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub hours: usize,
    #[arg(long, default_value_t = 2)]
    pub lag: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// First timestamp, default 2020-01-01T00:00:00Z.
    #[arg(long)]
    pub start: Option<String>,
    /// Output file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("target").required(true).args(["unit", "plant"])))]
pub struct EfficiencyArgs {
    #[arg(long)]
    pub unit: Option<String>,
    /// Every unit of this plant.
    #[arg(long)]
    pub plant: Option<String>,
    #[arg(long, default_value_t = hydrodispatch::efficiency::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// SVG plot of the curves.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Curve CSV file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LagArgs {
    #[arg(long)]
    pub up: String,
    #[arg(long)]
    pub down: String,
    /// Restrict the table and report to one season.
    #[arg(long)]
    pub season: Option<String>,
    #[arg(long, default_value_t = hydrodispatch::interdependency::DEFAULT_MAX_LAG)]
    pub max_lag: u32,
    /// JSON report, readable by `dispatch --links` and `serve --links`.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub plant: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Full training config as JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file, default `models/<plant>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("which").required(true).args(["plant", "all"])))]
pub struct DispatchArgs {
    /// Plant to dispatch; repeat for several.
    #[arg(long)]
    pub plant: Vec<String>,
    /// Every plant in the store.
    #[arg(long)]
    pub all: bool,
    /// `dry|avg|wet:winter|spring|summer` or `hist:START..END`.
    #[arg(long)]
    pub scenario: String,
    /// Directory of `<plant>.json` model files.
    #[arg(long, default_value = "models")]
    pub models: PathBuf,
    /// Explicit model file; repeat for several. Overrides `--models`.
    #[arg(long)]
    pub model: Vec<PathBuf>,
    /// Lag report JSON with cascade links.
    #[arg(long)]
    pub links: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Plant MW target `PLANT=MW`; repeat for several.
    #[arg(long, value_name = "PLANT=MW")]
    pub target: Vec<String>,
    /// Planning-case CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run manifest JSON for audit and `export`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = hydrodispatch_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value = "models")]
    pub models: PathBuf,
    #[arg(long)]
    pub links: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Machine-readable code of the innermost known error in the chain.
fn error_code(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(h) = cause.downcast_ref::<hydrodispatch::Error>() {
            return h.code();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "json";
        }
        if let Some(c) = cause.downcast_ref::<commands::CliError>() {
            return c.code;
        }
    }
    "error"
}

/// A closed stdout (e.g. piped into `head`) ends the command quietly.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let io = match c.downcast_ref::<hydrodispatch::Error>() {
            Some(hydrodispatch::Error::Io(io)) => Some(io),
            Some(hydrodispatch::Error::Csv(csv)) => match csv.kind() {
                csv::ErrorKind::Io(io) => Some(io),
                _ => None,
            },
            _ => c.downcast_ref::<std::io::Error>(),
        };
        io.is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {}: {message}", error_code(&e));
            ExitCode::from(1)
        }
    }
}
