//! `mmpc`: identification, closed-loop runs and comparisons from TOML configs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mmpc_core::error::ErrorKind;
use mmpc_core::experiment::{cmd_compare, cmd_control, cmd_identify, cmd_prbs_preview, ControlMode};

#[derive(Parser)]
#[command(name = "mmpc", version, about = "Subspace identification and multi-model MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Multi,
}

#[derive(Subcommand)]
enum Command {
    /// Excite the plant, identify every configured model, write models and reports.
    Identify { config: PathBuf },
    /// Run the closed loop with one model or the whole bank.
    Control {
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Identify the models first instead of loading them.
        #[arg(long)]
        identify: bool,
    },
    /// Compare two control run directories.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Output directory; defaults next to the first run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the configured excitation signal without running the plant.
    PrbsPreview { config: PathBuf },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Numerical => 2,
        ErrorKind::Io => 3,
    }
}

fn main() -> ExitCode {
    // usage errors count as configuration errors; 2 is reserved for numerics
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Identify { config } => cmd_identify(config),
        Command::Control { config, mode, identify } => {
            let mode = match mode {
                Mode::Single => ControlMode::Single,
                Mode::Multi => ControlMode::Multi,
            };
            cmd_control(config, mode, *identify)
        }
        Command::Compare { dir_a, dir_b, out } => cmd_compare(dir_a, dir_b, out.as_deref()),
        Command::PrbsPreview { config } => cmd_prbs_preview(config),
    };
    match result {
        Ok(out) => {
            print!("{}", out.report);
            println!("artifacts written to {}", out.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
