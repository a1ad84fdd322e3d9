use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use colosim::experiment::{SplitKind, DEFAULT_TRAIN_FRACTION};
use colosim::predict::{DEFAULT_RLS_DELTA, DEFAULT_RLS_LAMBDA, DEFAULT_SGD_ETA};
use colosim::ColocationMode;

mod commands;
mod output;

use output::Seeds;

#[derive(Parser, Debug)]
#[command(
    name = "colosim",
    version,
    about = "Simulate a multi-model GPU inference node and run the co-location interference prediction experiments",
    long_about = None
)]
struct Cli {
    /// Directory that receives the command's CSV files and manifest.json.
    #[arg(long, short, global = true, env = "COLOSIM_OUT", default_value = "colosim-out")]
    out: PathBuf,

    /// Profile table CSV. Defaults to the built-in synthetic table (seed 0),
    /// identical to profiles/default.csv.
    #[arg(long, global = true)]
    profiles: Option<PathBuf>,

    /// Worker threads for independent (scenario, seed) runs; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// More log output (-v info, -vv debug). RUST_LOG overrides this.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run scenario files and write outcomes.csv, requests.csv and samples.csv
    /// for every (scenario, seed).
    Simulate(SimulateArgs),
    /// Compare static and EWMA co-location features with a least-squares
    /// predictor on a high-churn scenario suite.
    EwmaExp(EwmaArgs),
    /// Compare the offline, SGD and RLS predictors on the four drift datasets.
    DriftExp(DriftArgs),
    /// Write the synthetic profile table.
    GenProfiles(GenProfilesArgs),
    /// Check a profile table and scenario files without running anything.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario TOML files.
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,

    /// Seeds as a list (0,3,7) or half-open range (0..4). Defaults to each
    /// scenario's own seed.
    #[arg(long)]
    seeds: Option<Seeds>,

    /// Also write the arrival trace (trace.csv) and co-location segments
    /// (segments.csv).
    #[arg(long)]
    detail: bool,

    /// Requests arriving before this time are left out of slo_summary.csv.
    #[arg(long, default_value_t = 0.0)]
    warmup_ms: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Chronological,
    Random,
}

impl From<SplitArg> for SplitKind {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Chronological => SplitKind::Chronological,
            SplitArg::Random => SplitKind::Random,
        }
    }
}

#[derive(Args, Debug)]
pub struct EwmaArgs {
    /// Scenario TOML files. Defaults to the built-in high-churn suite.
    scenarios: Vec<PathBuf>,

    /// Seeds as a list (0,3,7) or half-open range (0..20).
    #[arg(long, default_value = "0..20")]
    seeds: Seeds,

    /// EWMA smoothing factors compared against the static snapshot.
    #[arg(long, value_delimiter = ',', default_value = "1/3,1/2,2/3")]
    alphas: Vec<String>,

    /// Fraction of each run's batches used for training.
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    split_fraction: f64,

    /// How each run is split into training and test batches.
    #[arg(long, value_enum, default_value_t = SplitArg::Chronological)]
    split: SplitArg,

    /// Simulated seconds per built-in scenario.
    #[arg(long, default_value_t = 20.0)]
    duration_s: f64,
}

#[derive(Args, Debug)]
pub struct DriftArgs {
    /// Base scenario TOML with at least four models. Defaults to the
    /// built-in six-model deployment.
    #[arg(long)]
    base: Option<PathBuf>,

    /// Seeds as a list (0,3,7) or half-open range (0..20).
    #[arg(long, default_value = "0..20")]
    seeds: Seeds,

    /// Co-location features: `static` or `ewma:<alpha>`.
    #[arg(long, default_value = "ewma:1/2")]
    mode: ColocationMode,

    /// SGD step size.
    #[arg(long, default_value_t = DEFAULT_SGD_ETA)]
    eta: f64,

    /// RLS forgetting factor.
    #[arg(long, default_value_t = DEFAULT_RLS_LAMBDA)]
    lambda: f64,

    /// Diagonal the RLS gain matrix is reset to if it stops being positive
    /// definite.
    #[arg(long, default_value_t = DEFAULT_RLS_DELTA)]
    delta: f64,

    /// Simulated seconds per built-in drift dataset.
    #[arg(long, default_value_t = 20.0)]
    duration_s: f64,
}

#[derive(Args, Debug)]
pub struct GenProfilesArgs {
    /// Jitter seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Archetype TOML (fields of the synthesis spec). Defaults to the six
    /// built-in archetypes.
    #[arg(long)]
    archetypes: Option<PathBuf>,

    /// Output file. Defaults to <out>/profiles.csv.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Scenario TOML files to resolve against the profile table.
    scenarios: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let ctx = commands::Context {
        out: cli.out,
        profiles: cli.profiles,
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::EwmaExp(a) => commands::ewma_exp(&ctx, a),
        Command::DriftExp(a) => commands::drift_exp(&ctx, a),
        Command::GenProfiles(a) => commands::gen_profiles(&ctx, a),
        Command::Validate(a) => commands::validate(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
