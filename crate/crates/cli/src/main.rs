use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Fast feedforward networks with load balancing and a master leaf.
#[derive(Parser, Debug)]
#[command(name = "fff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Download and verify a dataset into the cache.
    Fetch(FetchArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Neuron, MAC, and latency accounting.
    Bench(BenchArgs),
    /// Run every configuration of a results table over several seeds.
    Sweep(SweepArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct FetchArgs {
    /// mnist or fashion_mnist
    dataset: String,
    /// Base URL or directory to try before the built-in mirrors (repeatable).
    #[arg(long = "mirror")]
    mirrors: Vec<String>,
    /// Only use the mirrors given with --mirror.
    #[arg(long)]
    no_default_mirrors: bool,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
enum ScaleArg {
    Full,
    Desk,
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Hard,
    Soft,
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<String>,
    /// vanilla_ff, fff_baseline, fff_balanced or fff_master_balanced
    #[arg(long)]
    variant: Option<String>,
    /// Training width: hidden size of the vanilla baseline, leaves times leaf width for trees.
    #[arg(long)]
    width: Option<usize>,
    /// Hidden size of each leaf (trees only).
    #[arg(long)]
    leaf_width: Option<usize>,
    /// Hidden size of the master leaf (fff_master_balanced only) [default: 8]
    #[arg(long)]
    master_width: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch budget [default: full]
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// Override the phase lengths, e.g. `--epochs 20,10`.
    #[arg(long, value_delimiter = ',')]
    epochs: Option<Vec<usize>>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Evaluate train and test accuracy every N epochs; 0 evaluates only at the end [default: 1]
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Write a checkpoint here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write config.json and metrics.jsonl under this directory.
    #[arg(long)]
    results_dir: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// JSON object whose keys are any of the flags above (snake_case);
    /// flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the dataset recorded in the checkpoint.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_enum, default_value = "hard")]
    mode: ModeArg,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Measure a trained model against a width-matched vanilla network.
    #[arg(long, required_unless_present = "grid", conflicts_with = "grid")]
    checkpoint: Option<PathBuf>,
    /// Measure freshly initialized models across the width/leaf-size grid.
    #[arg(long)]
    grid: bool,
    /// Time on test images of this dataset (defaults to the checkpoint's; the grid uses noise without it).
    #[arg(long)]
    dataset: Option<String>,
    /// Number of inputs.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Timing repetitions (at least 10).
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    /// Counts only.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// 1: dataset x leaf size at w=16; 2: FashionMNIST width x leaf size; 3: master leaf.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    table: u8,
    /// Seeds per configuration [default: 10 for tables 1-2, 5 for table 3]
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_enum, default_value = "full")]
    scale: ScaleArg,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// [default: results/table<N>-<scale>]
    #[arg(long)]
    results_dir: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// List the configurations without training.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Single depth instead of 1, 2, 3.
    #[arg(long)]
    depth: Option<usize>,
    /// Single leaf width instead of 1, 2, 4.
    #[arg(long)]
    leaf_width: Option<usize>,
    #[arg(long, default_value_t = fff_core::gradcheck::DEFAULT_TOLERANCE)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fetch(a) => commands::fetch(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
