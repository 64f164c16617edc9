//! `pigvae`: dataset generation, training, evaluation and property checks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERIC: u8 = 3;
    pub const PROPERTY: u8 = 4;

    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: Self::USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: Self::DATA, message: message.into() }
    }

    pub fn property(message: impl Into<String>) -> Self {
        Self { code: Self::PROPERTY, message: message.into() }
    }
}

impl From<pigvae::Error> for Failure {
    fn from(e: pigvae::Error) -> Self {
        use pigvae::Error as E;
        let code = match &e {
            E::Config(_) => Self::USAGE,
            E::Tensor(_) | E::Perm(_) | E::NonFinite { .. } => Self::NUMERIC,
            E::Graph(_) | E::Checkpoint { .. } | E::Io { .. } | E::Eval(_) => Self::DATA,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<pigvae::error::GraphError> for Failure {
    fn from(e: pigvae::error::GraphError) -> Self {
        pigvae::Error::from(e).into()
    }
}

#[derive(Parser, Debug)]
#[command(name = "pigvae", version, about = "Permutation-invariant graph autoencoder experiments")]
struct Cli {
    /// Upper bound on worker threads (the current build runs single-threaded).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic graph dataset.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Run an evaluation experiment on trained checkpoints.
    Eval(EvalArgs),
    /// Run the architectural property suites on random weights.
    Check(CheckArgs),
    /// Export mean embeddings of a dataset as CSV.
    Embed(EmbedArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Family name, or `mix10` for the ten-family mix.
    #[arg(long)]
    pub family: Option<String>,
    /// JSON list of families used as classes in rotation.
    #[arg(long, conflicts_with = "family")]
    pub classes: Option<String>,
    /// Family parameters as a JSON object; the single-parameter flags add to it.
    #[arg(long)]
    pub params: Option<String>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub m1: Option<usize>,
    #[arg(long)]
    pub m2: Option<usize>,
    #[arg(long)]
    pub n_min: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub d_m: Option<usize>,
    #[arg(long)]
    pub d_z: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub l_enc: Option<usize>,
    #[arg(long)]
    pub l_dec: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub model_n_min: Option<usize>,
    #[arg(long)]
    pub model_n_max: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub kl_warmup_steps: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Cosine learning-rate decay to zero over the run.
    #[arg(long)]
    pub lr_decay: Option<bool>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Continue from the latest checkpoint under `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Print losses every this many steps; 0 is silent.
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint file; repeat to report mean ± stderr over seeds.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// reconstruct | invariance | equivariance | ged | isomorphism | interpolate | probe | embed
    #[arg(long)]
    pub exp: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use only the first this many graphs.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relabelings per graph for the invariance audit.
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub max_edits: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Interpolation points per pair.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// 64 adds the finite-difference gradient checks.
    #[arg(long, default_value_t = 64, value_parser = clap::builder::TypedValueParser::map(clap::builder::PossibleValuesParser::new(["32", "64"]), |s| s.parse::<u32>().expect("listed")))]
    pub precision: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the property table as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mutation hook: flip the sign inside SoftSort.
    #[arg(long, hide = true)]
    pub inject_softsort_sign_error: bool,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(Failure::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let threads = cli.threads;
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a, threads),
        Command::Train(a) => commands::train(a, threads),
        Command::Eval(a) => commands::eval(a, threads),
        Command::Check(a) => commands::check(a),
        Command::Embed(a) => commands::embed(a, threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
