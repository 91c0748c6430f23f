mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "routedk", version, about = "Routed LoRA experts for session bundle generation")]
struct Cli {
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "run")]
    dir: PathBuf,
    /// JSON config. Defaults to <dir>/config.json when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Teacher {
    Oracle,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExpertArg {
    Base,
    High,
    Fine,
    Merged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MergeArg {
    Ties,
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Dynamic,
    Static,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FusionArg {
    Base,
    High,
    Fine,
    Merged,
    Average,
    Ties,
    Static,
    Dynamic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world and its sessions.
    Worldgen,
    /// Produce knowledge.jsonl from the oracle teacher or an external file.
    Distill {
        #[arg(long, value_enum)]
        teacher: Teacher,
        /// Externally distilled knowledge (with --teacher file).
        #[arg(long)]
        file: Option<PathBuf>,
        /// JSON object mapping external tokens to vocabulary tokens.
        #[arg(long)]
        aliases: Option<PathBuf>,
    },
    /// Train and freeze the backbone.
    Pretrain,
    /// Train one expert adapter on the frozen backbone.
    TrainExpert {
        #[arg(long, value_enum)]
        expert: ExpertArg,
        /// Knowledge file; defaults to <dir>/knowledge.jsonl. Not accepted for base.
        #[arg(long)]
        knowledge: Option<PathBuf>,
    },
    /// Merge the expert updates into one dense update.
    Merge {
        #[arg(long, value_enum)]
        strategy: MergeArg,
        #[arg(long)]
        density: Option<f64>,
        /// Expert checkpoints; defaults to the base, high and fine experts in <dir>.
        #[arg(long, num_args = 1..)]
        experts: Vec<PathBuf>,
    },
    /// Fit the router or the static coefficients with a learning-rate grid.
    TrainFusion {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_delimiter = ',')]
        lr_grid: Option<Vec<f64>>,
    },
    /// Decode a split and write predictions.
    Generate {
        #[arg(long, value_enum)]
        fusion: FusionArg,
        /// Number of sampled candidates; 1 decodes once.
        #[arg(long)]
        tts: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Score a predictions file.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        /// Run name; defaults to the file stem.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Compare evaluation reports.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Write the per-layer routing weights of one session as CSV.
    Trace {
        #[arg(long)]
        session: u64,
    },
}

/// Failures split by exit code.
pub enum Failure {
    Usage(String),
    Invalid(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Invalid(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = commands::Context::open(&cli.dir, cli.config.as_deref(), argv).and_then(|mut ctx| {
        match cli.command {
            Command::Worldgen => ctx.worldgen(),
            Command::Distill { teacher, file, aliases } => ctx.distill(teacher, file, aliases),
            Command::Pretrain => ctx.pretrain(),
            Command::TrainExpert { expert, knowledge } => ctx.train_expert(expert, knowledge),
            Command::Merge { strategy, density, experts } => ctx.merge(strategy, density, experts),
            Command::TrainFusion { mode, lr_grid } => ctx.train_fusion(mode, lr_grid),
            Command::Generate { fusion, tts, temperature, split } => ctx.generate(fusion, tts, temperature, split),
            Command::Eval { predictions, name, split } => ctx.eval(&predictions, name, split),
            Command::Compare { reports, baseline } => ctx.compare(&reports, baseline),
            Command::Trace { session } => ctx.trace(session),
        }?;
        ctx.finish()
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
