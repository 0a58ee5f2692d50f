use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "fcan", version, about = "Two-stream flow-guided attention networks on synthetic video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset into the data directory.
    Gen(Common),
    /// Train a model and write its checkpoint and loss curve.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Export attention maps of test videos as PGM images.
    Attn(EvalArgs),
    /// Train and evaluate one model per (cross-link depth, seed).
    Ablate(AblateArgs),
    /// Check every op's gradient against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Remove camera motion from a directory of flow images.
    Compensate(CompensateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Desk,
    PaperScale,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seeds data generation, initialization, and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of cross-link layers.
    #[arg(long)]
    depth: Option<usize>,
    /// Segments averaged per test video.
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    detach_crosslink: bool,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to load; defaults to `<out-dir>/model.fcan`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated cross-link depths.
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args, Debug, Clone)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Only this precision; both by default.
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long, default_value_t = fcan::autograd::suite::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct CompensateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding flow_x_%05d.pgm / flow_y_%05d.pgm pairs.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Flow bound of the images; defaults to the config's.
    #[arg(long)]
    bound: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(c) => commands::gen(&c),
        Command::Train(c) => commands::train(&c),
        Command::Eval(a) => commands::eval(&a),
        Command::Attn(a) => commands::attn(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Compensate(a) => commands::compensate(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
