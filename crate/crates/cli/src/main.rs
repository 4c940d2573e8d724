use std::path::PathBuf;
use std::process::ExitCode;

use aap_cli::report::ReportKind;
use aap_cli::CliError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aap", version, about = "Automatic attention pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, prune and write a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Emit plot-ready CSV from a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        kind: ReportKind,
    },
    /// Time the masked model against its compacted form.
    Bench {
        /// Checkpoint file or run directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Print a checkpoint header.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, output } => {
            let dir = aap_cli::run::cmd_run(&config, output)?;
            let summary = std::fs::read_to_string(dir.join(aap_cli::run::SUMMARY_FILE))
                .map_err(|e| CliError::io(&dir, e))?;
            eprintln!("run directory: {}", dir.display());
            print!("{summary}");
        }
        Command::Report { run, kind } => {
            let (path, csv) = aap_cli::report::cmd_report(&run, kind)?;
            eprintln!("wrote {}", path.display());
            print!("{csv}");
        }
        Command::Bench {
            checkpoint,
            trials,
            batch,
        } => println!("{}", to_json(&aap_cli::bench::cmd_bench(&checkpoint, trials, batch)?)),
        Command::Inspect { checkpoint } => println!("{}", to_json(&aap_cli::cmd_inspect(&checkpoint)?)),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { aap_cli::EXIT_USAGE as u8 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
