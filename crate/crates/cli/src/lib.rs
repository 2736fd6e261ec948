//! The `trisim` command line: data generation, training, evaluation, the
//! ablation and robustness grids, latency benchmarks, similarity-map export
//! and the gradient check.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numeric failure (divergence or a failed gradient check).

pub mod commands;
pub mod data;
pub mod grid;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trisim::{Error, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "trisim", version, about = "3D Siamese text-similarity network")]
pub struct Cli {
    /// Suppress progress and report tables on stdout; files are still written.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paraphrase dataset as train/val/test TSV files.
    GenData(GenDataArgs),
    /// Train one model and write its checkpoint and per-epoch metric log.
    Train(TrainArgs),
    /// Accuracy and loss of a checkpoint on one split.
    Eval(EvalArgs),
    /// Train every cell of an architecture grid and tabulate the results.
    Ablate(AblateArgs),
    /// Block-selection sweep with and without adaptive gates.
    Robust(RobustArgs),
    /// Forward latency per pair for each grid cell.
    Bench(BenchArgs),
    /// Export the attention scores and both softmax maps of one pair as CSV.
    DumpSim(DumpSimArgs),
    /// Finite-difference check of every primitive, module and model arm.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 50)]
    pub vocab: u32,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub min_len: usize,
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    #[arg(long, default_value_t = 2)]
    pub synonym_group: u32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory with `{train,val,test}.tsv`, or `.manifest` files in file mode.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// When given, the checkpoint's configuration must match it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also write the metrics as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridData {
    /// Shared dataset directory. Without it each seed generates its own
    /// synthetic dataset from that seed.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Pairs per generated dataset when `--data` is absent.
    #[arg(long, default_value_t = 2000)]
    pub pairs: usize,
    /// First seed; seeds `seed..seed + seeds` are run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated grids (`main`, `fa-only`, `rfm-arch`, `all`) or cell names.
    #[arg(long, default_value = "main")]
    pub grid: String,
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Timing repetitions per cell.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[command(flatten)]
    pub data: GridData,
}

#[derive(Debug, Args)]
pub struct RobustArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[command(flatten)]
    pub data: GridData,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "main")]
    pub grid: String,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Seed of the parameter initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpSimArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory to take the pair from (with `--pair`).
    #[arg(long, requires = "pair")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Row index of the pair within the split.
    #[arg(long)]
    pub pair: Option<usize>,
    /// Block-stack file of the first sentence (with `--y`).
    #[arg(long, requires = "y", conflicts_with = "data")]
    pub x: Option<PathBuf>,
    #[arg(long, requires = "x")]
    pub y: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Adds one row for this configuration's architecture at check size.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flip the sign of one op's backward rule (negative control).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

/// Everything a command can fail with.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    /// Rows of the gradient check that exceeded the tolerance.
    GradCheck(Vec<String>),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::GradCheck(rows) => {
                write!(f, "gradient check failed for: {}", rows.join(", "))
            }
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::GradCheck(_) => 3,
            CliError::Core(e) => match e {
                Error::Config { .. } | Error::Argument(_) => 1,
                Error::Numeric(_) => 3,
                Error::Shape(_)
                | Error::Input(_)
                | Error::Format { .. }
                | Error::Io { .. }
                | Error::State(_) => 2,
            },
        }
    }
}

/// Reads and validates a configuration file. A missing or unreadable file
/// counts as a configuration error.
pub fn load_config(path: &std::path::Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(RunConfig::from_json(&text)?)
}

/// Caps rayon's pool at `TRISIM_THREADS` when set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("TRISIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "TRISIM_THREADS must be a positive integer, got `{v}`"
        ))
    })?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let quiet = cli.quiet;
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a, quiet),
        Command::Train(a) => commands::train(&a, quiet),
        Command::Eval(a) => commands::eval(&a, quiet),
        Command::Ablate(a) => commands::ablate(&a, quiet),
        Command::Robust(a) => commands::robust(&a, quiet),
        Command::Bench(a) => commands::bench(&a, quiet),
        Command::DumpSim(a) => commands::dump_sim(&a, quiet),
        Command::Gradcheck(a) => commands::gradcheck(&a, quiet),
    }
}

/// Parses `args` (including the program name), runs, and maps the outcome
/// to an exit code. Help and version requests exit 0.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
