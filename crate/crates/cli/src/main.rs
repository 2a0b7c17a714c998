//! `kae`: data generation, training, evaluation, rollouts, spectra and benchmarks.

mod bench;
mod compare;
mod config;
mod data;
mod plots;
mod rollout;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kae_core::dataset::Split;
use kae_core::model::BlockKind;
use kae_core::pde::{IcFamily, PdeKind};
use kae_core::{Error, Result};

#[derive(Parser)]
#[command(name = "kae", version, about = "Koopman autoencoder toolkit for 1-D periodic PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate train/val/test splits and write them with a manifest.
    GenData(GenDataArgs),
    /// Train a model and write its checkpoint and loss history.
    Train(TrainArgs),
    /// Five-term loss report per initial-condition family.
    Eval(EvalArgs),
    /// Reference simulation against the model's latent rollout.
    Rollout(RolloutArgs),
    /// Eigenvalues of the learned latent matrix.
    Eig(EigArgs),
    /// Inference time and attention cost against the number of heads.
    BenchHeads(BenchArgs),
    /// Train TransRes against DenseRes (Burgers) or ConvRes (KS) on the same data.
    CompareBlocks(CompareArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// key = value file; flags override its entries
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pde: Option<PdeKind>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid points
    #[arg(long)]
    pub n: Option<usize>,
    /// Saved states per trajectory
    #[arg(long)]
    pub steps: Option<usize>,
    /// Time between saved states
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Default)]
pub struct ModelArgs {
    /// Number of attention heads
    #[arg(long)]
    pub heads: Option<usize>,
    /// Latent dimension r
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub ff_width: Option<usize>,
    /// Encoder layers per TransRes block
    #[arg(long)]
    pub depth: Option<usize>,
    /// Seed of the parameter initialization
    #[arg(long)]
    pub model_seed: Option<u64>,
}

#[derive(Args, Default)]
pub struct OptimArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Prediction horizon P
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Seed of the batch shuffle
    #[arg(long)]
    pub seed: Option<u64>,
    /// Global gradient-norm ceiling; 0 disables clipping
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Rewrite the checkpoint every this many epochs; 0 disables
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Stop after this many minutes of wall-clock time; 0 means unlimited
    #[arg(long)]
    pub time_budget_min: Option<f64>,
    /// Use only the first N training trajectories; 0 means all
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first N validation trajectories; 0 means all
    #[arg(long)]
    pub val_limit: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub block: Option<BlockKind>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Checkpoint path; history, best model and config are written next to it
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Print nothing per epoch
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Dataset directory supplying the equation, grid and time step
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub ic_family: Option<IcFamily>,
    /// Draw a fresh initial condition from this seed instead of using a stored trajectory
    #[arg(long)]
    pub seed: Option<u64>,
    /// Which stored trajectory of the family to use when no seed is given
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated head counts
    #[arg(long)]
    pub heads: Option<String>,
    /// Timed repetitions per head count after 3 warm-up runs
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub ff_width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Trajectories in the timed batch
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Short training epochs per head count before the loss is recorded; 0 records the untrained loss
    #[arg(long)]
    pub train_epochs: Option<usize>,
    /// Training trajectories used by the short training
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pde: Option<PdeKind>,
    /// Existing dataset directory; generated under OUT/data when absent
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training trajectories when generating data
    #[arg(long)]
    pub train: Option<usize>,
    /// Validation trajectories when generating data
    #[arg(long)]
    pub val: Option<usize>,
    /// Dataset seed when generating data
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Grid points when generating data
    #[arg(long)]
    pub n: Option<usize>,
    /// Saved states per trajectory when generating data
    #[arg(long)]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) | Error::Dimension { .. } | Error::Contract(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::NonFinite { .. } | Error::BlowUp { .. } | Error::Training(_) | Error::Numerical(_) => 4,
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("KAE_THREADS") else {
        return Ok(());
    };
    let n: usize =
        v.trim().parse().map_err(|_| Error::Config(format!("KAE_THREADS must be a positive integer, got '{v}'")))?;
    if n == 0 {
        return Err(Error::Config("KAE_THREADS must be ≥ 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn dispatch(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenData(a) => data::gen_data(a),
        Command::Train(a) => run::train(a),
        Command::Eval(a) => run::eval(a),
        Command::Rollout(a) => rollout::rollout(a),
        Command::Eig(a) => run::eig(a),
        Command::BenchHeads(a) => bench::bench_heads(a),
        Command::CompareBlocks(a) => compare::compare_blocks(a),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Format { offset: 0, msg: "x".into() }), 3);
        assert_eq!(exit_code(&Error::Training("x".into())), 4);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 4);
    }
}
