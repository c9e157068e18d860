use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use cloakopt::{load_config, resolve_threads, run, CliError, Command, RunOptions, THREADS_ENV};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CommandArg {
    /// Solve the obstacle-free reference problem.
    Reference,
    /// Solve the obstacle problem without a cloak.
    Uncloaked,
    /// Optimize the cloak diffusivity.
    Optimize,
    /// Evaluate a stored design.
    Evaluate,
    /// Refine the mesh and prolongate a stored design.
    Transfer,
    /// Compare the adjoint gradient with finite differences.
    CheckGradient,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Reference => Command::Reference,
            CommandArg::Uncloaked => Command::Uncloaked,
            CommandArg::Optimize => Command::Optimize,
            CommandArg::Evaluate => Command::Evaluate,
            CommandArg::Transfer => Command::Transfer,
            CommandArg::CheckGradient => Command::CheckGradient,
        }
    }
}

/// Passive thermal cloak design by bilinear optimal control.
#[derive(Debug, Parser)]
#[command(name = "cloakopt", version)]
struct Cli {
    #[arg(value_enum)]
    command: CommandArg,
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the scenario).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Design file for `evaluate` and `transfer`.
    #[arg(long)]
    design: Option<PathBuf>,
    /// Probing source centre, x coordinate.
    #[arg(long, requires = "source_y", allow_negative_numbers = true)]
    source_x: Option<f64>,
    /// Probing source centre, y coordinate.
    #[arg(long, requires = "source_x", allow_negative_numbers = true)]
    source_y: Option<f64>,
    /// Worker threads; CLOAKOPT_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(cli: Cli) -> Result<PathBuf, CliError> {
    let cfg = load_config(&cli.config)?;
    let env = std::env::var(THREADS_ENV).ok();
    let opts = RunOptions {
        out_dir: cli.out,
        design: cli.design,
        source: cli.source_x.zip(cli.source_y).map(|(x, y)| [x, y]),
        threads: resolve_threads(cli.threads, env.as_deref())?,
        progress: true,
    };
    let outcome = run(cli.command.into(), &cfg, &opts)?;
    print!("{}", outcome.report);
    Ok(outcome.report_path)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(path) => {
            eprintln!("report written to {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cloakopt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
