//! `fdtkit` command line. [`dispatch`] parses arguments, runs one subcommand
//! and maps failures to exit codes: 2 for usage errors, 1 for everything
//! else, with a last stderr line of the form `fdtkit: error[category]: message`.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;
pub mod manifest;
mod merge;

pub use fdtkit::DEFAULT_SEED;

#[derive(Debug, Parser)]
#[command(name = "fdtkit", version, about = "Forced-response estimation with lag-indexed emulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an icosahedral mesh and export it.
    Icosphere(IcosphereArgs),
    /// Make a synthetic linear truth system and simulate an ensemble.
    Synth(SynthArgs),
    /// Climatology, anomalies, member split and standardization.
    Preprocess(PreprocessArgs),
    /// Train one emulator per lag.
    Train(TrainArgs),
    /// Skill of a bank against persistence.
    Eval(EvalArgs),
    /// Emulator and classical responses for a scenario.
    Respond(RespondArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct IcosphereArgs {
    #[arg(long)]
    level: u32,
    #[arg(long)]
    out: PathBuf,
    /// Unused by mesh construction; recorded in the manifest.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON file with `truth`, `members`, `months`, `burn_in`, `start_month`, `seed`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mesh_level: Option<u32>,
    #[arg(long)]
    spectral_radius: Option<f64>,
    #[arg(long)]
    teleconnection_strength: Option<f64>,
    #[arg(long)]
    seasonal_amplitude: Option<f64>,
    #[arg(long)]
    cubic_damping: Option<f64>,
    #[arg(long)]
    members: Option<usize>,
    #[arg(long)]
    months: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    start_month: Option<u8>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Raw dataset directory or manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train, validation and test fractions of the members.
    #[arg(long, default_value = "0.7,0.15,0.15")]
    split: String,
    /// Keep anomalies in physical units.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Anomaly dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with `lags`, `emulator`, `max_train_pairs`, `max_validation_pairs`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma list with ranges, e.g. `1-6,12,24`.
    #[arg(long)]
    lags: Option<String>,
    /// `mlp` or `linear`.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    layer_norm: Option<bool>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_train_pairs: Option<usize>,
    #[arg(long)]
    max_validation_pairs: Option<usize>,
    /// Member split file; defaults to `split.json` in the data directory.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Lags trained concurrently.
    #[arg(long, default_value_t = 1)]
    parallel_lags: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Members to score; defaults to the test members of the split.
    #[arg(long)]
    members: Option<String>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Random pairs per lag; all pairs when omitted.
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RespondArgs {
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Bank for the emulator response; omit for classical only.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Preset name or `lat_min,lat_max,lon_min,lon_max`; repeatable.
    #[arg(long = "region", allow_hyphen_values = true)]
    regions: Vec<String>,
    /// `channel=value`; repeatable.
    #[arg(long = "amplitude")]
    amplitudes: Vec<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    lags: Option<String>,
    #[arg(long)]
    rule: Option<String>,
    /// Skip the covariance-based estimate.
    #[arg(long)]
    skip_classical: bool,
    #[arg(long, default_value_t = fdtkit::fdt::DEFAULT_EIGEN_FLOOR)]
    eigen_floor: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Anomaly dataset as `id=path` or a path; repeatable.
    #[arg(long = "data", required = true)]
    datasets: Vec<String>,
    /// Bank as `id=path` or a path; repeatable.
    #[arg(long = "bank")]
    banks: Vec<String>,
    /// Web bundle directory.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = fdtkit_service::DEFAULT_PORT)]
    port: u16,
    #[arg(long)]
    seed: Option<u64>,
}

/// A failure with a machine-readable category.
#[derive(Debug)]
pub struct CliError {
    pub category: String,
    pub message: String,
}

impl CliError {
    fn new(category: &str, message: impl Into<String>) -> Self {
        Self {
            category: category.into(),
            message: message.into(),
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new("validation", message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fdtkit: error[{}]: {}", self.category, self.message)
    }
}

impl From<fdtkit::Error> for CliError {
    fn from(e: fdtkit::Error) -> Self {
        Self::new(e.category(), e.to_string())
    }
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            let first = e.kind().as_str().unwrap_or("invalid arguments");
            eprintln!("fdtkit: error[usage]: {first}");
            return 2;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    if let Command::Serve(args) = command {
        return commands::serve(args);
    }
    // everything but the service runs single-threaded unless asked otherwise
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::new("internal", format!("cannot start worker pool: {e}")))?;
    pool.install(|| match command {
        Command::Icosphere(a) => commands::icosphere(a),
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Respond(a) => commands::respond(a),
        Command::Serve(_) => unreachable!("handled above"),
    })
}

/// Parses `1,2,5-8` into a sorted list.
pub fn parse_lags(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad lag {s:?} in {text:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty lag range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("lag list is empty".into());
    }
    let n = out.len();
    out.sort_unstable();
    out.dedup();
    if out.len() != n {
        return Err(format!("lag list {text:?} repeats a lag"));
    }
    Ok(out)
}
