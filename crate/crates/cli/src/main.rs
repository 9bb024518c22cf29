//! `rgnn`: dataset generation, oracle labeling, input dumps, training,
//! evaluation and WL diagnostics.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod manifest;

/// Exit status of a failed run.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or flag combinations (exit 2).
    Usage(String),
    /// Errors from the input files or the computation itself (exit 1).
    Domain(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Domain(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "rgnn", version, about = "Relational GNN value functions for classical planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a dataset of solvable instances.
    Gen(GenArgs),
    /// Expand instances and write V*-labeled states.
    Oracle(OracleArgs),
    /// Dump the network input of every reachable state.
    Transform(TransformArgs),
    /// Train a value function and write a checkpoint plus metrics.
    Train(TrainArgs),
    /// Run the greedy policy of a checkpoint (or of V*) on instances.
    Eval(EvalArgs),
    /// Compare two graphs under a Weisfeiler-Leman variant.
    Wl(WlArgs),
    /// Check analytic gradients of the value loss against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    Rgnn,
    #[value(name = "rgnn-t")]
    RgnnT,
    Rgnn2,
    #[value(name = "2gnn")]
    TwoGnn,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelSpec {
    /// Architecture.
    #[arg(long, value_enum, default_value = "rgnn-t")]
    pub model: ModelArg,
    /// Composition depth of R-GNN[t].
    #[arg(long, default_value_t = 1)]
    pub t: usize,
    /// Accumulate R_1 ∪ … ∪ R_t instead of using R_t alone.
    #[arg(long)]
    pub cumulative: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    /// navig-xy, visitall-xy, visitall, gripper, blocks-s, blocks-m or vacuum.
    #[arg(long)]
    pub domain: String,
    /// Grid width; balls (gripper); blocks; locations (vacuum).
    #[arg(long)]
    pub n: usize,
    /// Grid height; robots (vacuum); unused otherwise.
    #[arg(long, default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Obstacle density (navig-xy) or per-robot edge drop rate (vacuum).
    #[arg(long, default_value_t = 0.0)]
    pub density: f64,
    /// Number of cells to visit (visitall variants); all cells by default.
    #[arg(long)]
    pub targets: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct OracleArgs {
    /// Directory with domain.pddl and problem files.
    #[arg(long)]
    pub data: PathBuf,
    /// Output file: one JSON record per labeled state.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = rgnn::statespace::DEFAULT_STATE_CAP)]
    pub state_cap: usize,
    /// Keep at most this many states per V* value.
    #[arg(long)]
    pub per_value_cap: Option<usize>,
    /// Keep dead ends, labeled with this value.
    #[arg(long)]
    pub dead_end_value: Option<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct TransformArgs {
    #[command(flatten)]
    pub model: ModelSpec,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only the initial state of each instance.
    #[arg(long)]
    pub init_only: bool,
    #[arg(long, default_value_t = rgnn::statespace::DEFAULT_STATE_CAP)]
    pub state_cap: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelSpec,
    /// Embedding dimension k.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Message-passing layers L.
    #[arg(long, default_value_t = 15)]
    pub layers: usize,
    /// Training instances.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation instances; otherwise `--val-fraction` of the training states.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics CSV path; defaults to the checkpoint path with `.metrics.csv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    /// Stop a seed once its training loss falls below this value.
    #[arg(long)]
    pub target_loss: Option<f64>,
    #[arg(long)]
    pub per_value_cap: Option<usize>,
    #[arg(long, default_value_t = rgnn::statespace::DEFAULT_STATE_CAP)]
    pub state_cap: usize,
    /// Seed of the state sampling and the validation split.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Use exact V* from state-space expansion instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    #[arg(long)]
    pub data: PathBuf,
    /// Per-instance CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = rgnn::policy::DEFAULT_STEP_CAP)]
    pub step_cap: usize,
    /// Break value ties randomly under this seed.
    #[arg(long)]
    pub tie_seed: Option<u64>,
    /// Expand instances up to this many states to report V*(init).
    #[arg(long, default_value_t = 100_000)]
    pub oracle_cap: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct WlArgs {
    /// wl1, fwl2, owl2 or owl3.
    #[arg(long)]
    pub algo: String,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Write a run manifest here.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub model: ModelSpec,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// Generated domain providing the state.
    #[arg(long, default_value = "navig-xy")]
    pub domain: String,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 0.2)]
    pub density: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = rgnn::autodiff::GRAD_CHECK_STEP)]
    pub step: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("RGNN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("RGNN_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = init_threads().and_then(|()| commands::run(&cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
