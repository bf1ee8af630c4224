mod attn;
mod cost;
mod evolve;
mod output;
mod sfc_cmd;
mod train_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use output::{Format, Table};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] eat_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 2,
            CliError::Core(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Seed for every random choice; overrides a config's own seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Suppress progress output on standard error.
    #[arg(long, global = true)]
    pub quiet: bool,
}

impl Global {
    pub fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eat", version, about = "Space-filling-curve transformer toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Curve rendering and bijectivity checks.
    #[command(subcommand)]
    Sfc(sfc_cmd::SfcCommand),
    /// Evolutionary-algorithm demonstrations.
    #[command(subcommand)]
    Evolve(evolve::EvolveCommand),
    /// Analytic parameter and FLOP accounting.
    #[command(subcommand)]
    Cost(cost::CostCommand),
    /// Optimal global/local channel split.
    #[command(subcommand)]
    Split(cost::SplitCommand),
    /// Train on an IDX digit corpus.
    Train(train_cmd::TrainArgs),
    /// Evaluate a checkpoint on an IDX digit corpus.
    Eval(train_cmd::EvalArgs),
    /// Attention map export.
    #[command(subcommand)]
    Attn(attn::AttnCommand),
}

fn run(cli: Cli) -> CliResult {
    let g = &cli.global;
    match cli.command {
        Command::Sfc(c) => sfc_cmd::run(c, g),
        Command::Evolve(c) => evolve::run(c, g),
        Command::Cost(c) => cost::run_cost(c, g),
        Command::Split(c) => cost::run_split(c, g),
        Command::Train(a) => train_cmd::run_train(a, g),
        Command::Eval(a) => train_cmd::run_eval(a, g),
        Command::Attn(c) => attn::run(c, g),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
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
