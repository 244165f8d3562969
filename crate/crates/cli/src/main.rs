use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod echo;

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "lkt-engine", version, about = "Logistic knowledge tracing pipeline")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Seed for every stochastic step of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a CSV log (or re-read a cache) into a chronological event cache.
    Ingest(IngestArgs),
    /// Cut a later-time test window and the earlier history of its students.
    Split(SplitArgs),
    /// Fit a model from a feature spec.
    Fit(FitArgs),
    /// Score a test cache and report AUC, log-loss and calibration.
    Evaluate(EvaluateArgs),
    /// Threshold agreement between two models on the same test cache.
    Agreement(AgreementArgs),
    /// Fuzzy-cluster tag combos by their performance covariance.
    Cluster(ClusterArgs),
    /// Compare practice decision rules on simulated students.
    Simulate(SimulateArgs),
    /// Write a synthetic interaction log as CSV.
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Column naming preset: `canonical` or `ednet`.
    #[arg(long, default_value = "canonical")]
    pub schema: String,
    /// Field delimiter of the input.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving `train.cache` and `test.cache`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub start_frac: f64,
    #[arg(long)]
    pub end_frac: f64,
    /// Shift each student's timeline by a seeded offset in [0, horizon) days
    /// before slicing. Use for logs whose timestamps are per-student relative.
    #[arg(long)]
    pub horizon_days: Option<f64>,
    /// Exhaustively verify the split invariants before writing.
    #[arg(long)]
    pub audit: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Cluster table for specs that use the `cluster` level.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    pub l2: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 3)]
    pub outer_cycles: usize,
    /// Keep the nonlinear parameters at their spec values.
    #[arg(long)]
    pub fixed_params: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Test cache.
    #[arg(long)]
    pub input: PathBuf,
    /// Earlier events replayed before scoring (usually the split's train cache).
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Report path; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write one prediction per test question.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct AgreementArgs {
    /// Exactly two model files.
    #[arg(long, num_args = 2, required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    pub threshold: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Cluster counts; several values sweep k.
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    /// Directory receiving `clusters_k<K>.tsv` per k and `summary.tsv`.
    #[arg(long)]
    pub output: PathBuf,
    /// Minimum students supporting a combo pair's covariance.
    #[arg(long, default_value_t = 10)]
    pub min_students: usize,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Simulation config.
    #[arg(long)]
    pub pdr: PathBuf,
    /// Directory receiving `summary.tsv`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub students: Option<usize>,
    /// Mastery threshold used for the mastered-item counts and agreement.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write the per-trial trace of these student indices.
    #[arg(long, value_delimiter = ',')]
    pub trace: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub students: usize,
    #[arg(long, default_value_t = 100)]
    pub mean_events: usize,
    #[arg(long, default_value_t = 600)]
    pub items: usize,
    #[arg(long, default_value_t = 120)]
    pub combos: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LKT_ENGINE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a, seed),
        Command::Split(a) => commands::split(&a, seed),
        Command::Fit(a) => commands::fit(&a, seed),
        Command::Evaluate(a) => commands::evaluate(&a, seed),
        Command::Agreement(a) => commands::agreement(&a, seed),
        Command::Cluster(a) => commands::cluster(&a, seed),
        Command::Simulate(a) => commands::simulate(&a, cli.seed),
        Command::Generate(a) => commands::generate(&a, seed),
    }
}
