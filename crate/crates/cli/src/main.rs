use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(
    name = "hydra",
    version,
    about = "Fused head-pruned transformer ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train, test, noisy and OOD splits of a synthetic task.
    GenData(GenDataArgs),
    /// Train a base model on the train split.
    Train(TrainArgs),
    /// Write Taylor head scores of a model.
    ScoreHeads(ScoreHeadsArgs),
    /// Write a greedy circuit ranking of a model.
    ExtractCircuit(ExtractArgs),
    /// Build pruned ensemble members.
    Prune(PruneArgs),
    /// Fuse a base model and its members into one model.
    Fuse(FuseArgs),
    /// Evaluate accuracy, calibration and OOD detection.
    Eval(EvalArgs),
    /// Report parameter and compute cost, and time inference.
    Bench(BenchArgs),
    /// Run the built-in reference checks.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    /// 64-bit scalars.
    Verify,
    /// 32-bit scalars.
    Bench,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Taylor,
    Circuit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    Acc,
    Ood,
    Avg,
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub task_seed: u64,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long, default_value_t = 8192)]
    pub train_size: usize,
    #[arg(long, default_value_t = 2048)]
    pub test_size: usize,
    #[arg(long, default_value_t = 2048)]
    pub ood_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub ff: usize,
    #[arg(long, default_value_t = 600)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
#[group(id = "budget", required = true, multiple = false)]
pub struct BudgetArgs {
    /// Heads to prune in every layer.
    #[arg(long, group = "budget")]
    pub budget_per_layer: Option<usize>,
    /// Heads to prune in total.
    #[arg(long, group = "budget")]
    pub budget_global: Option<usize>,
}

#[derive(Args)]
pub struct ScoreHeadsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Calibration subset seed.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 256)]
    pub calib_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long, value_enum, default_value = "avg")]
    pub score: ScoreArg,
    /// Tie-break seed.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Validation samples per split used to score candidates.
    #[arg(long, default_value_t = 512)]
    pub val_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub members: usize,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long, value_enum, default_value = "circuit")]
    pub strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "avg")]
    pub score: ScoreArg,
    #[arg(long, default_value_t = 512)]
    pub val_size: usize,
    #[arg(long, default_value_t = 256)]
    pub calib_size: usize,
    /// Fine-tuning steps per member; 0 keeps members zero-shot.
    #[arg(long, default_value_t = 0)]
    pub finetune_steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory written by prune. Without it, `--members` full-mask copies
    /// of the model are fused.
    #[arg(long)]
    pub prune_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub members: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Model or fused model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// In-distribution split: `test` or `noisy`.
    #[arg(long, default_value = "test")]
    pub id_split: String,
    #[arg(long, default_value_t = 15)]
    pub bins: usize,
    #[arg(long, value_enum, default_value = "verify")]
    pub precision: Precision,
    /// Also write per-head ID/OOD centroid distances of this layer.
    #[arg(long)]
    pub geometry_layer: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Data directory for timing; cost figures need only the model.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bench")]
    pub precision: Precision,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Suites to run; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub suites: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: cli: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    if let Err(e) = commands::init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::ScoreHeads(a) => commands::score_heads(&a),
        Command::ExtractCircuit(a) => commands::extract_circuit(&a),
        Command::Prune(a) => commands::prune(&a),
        Command::Fuse(a) => commands::fuse(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Verify(a) => commands::verify(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
