use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hrn_cli::config::Overrides;
use hrn_cli::{eval, inspect, train, CliError};
use hrn_core::dataio::Split;

/// Hash-routed network experiments.
///
/// Exit codes: 0 success, 1 config error, 2 data error, 3 runtime error.
/// Data files are looked up under $HRN_DATA_DIR (default ./data) unless the
/// config sets `data_dir`.
#[derive(Parser)]
#[command(name = "hrn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a task sequence described by a TOML config.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// no_grad_regularization, lambda_zero or no_basis_update; repeatable.
        #[arg(long = "ablate", value_name = "NAME")]
        ablate: Vec<String>,
        /// Fraction of each training split kept, stratified by class.
        #[arg(long, value_name = "FRACTION")]
        subsample: Option<f64>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Accuracy of one task head on the matching classes of an IDX directory.
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        head: usize,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Usage ratios and residue-norm histograms from a trace log.
    Inspect {
        trace_log: PathBuf,
        /// Defaults to the log's directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Train { config, seed, ablate, subsample, out } => {
            train::run(&config, &Overrides { seed, ablate, subsample, out })
        }
        Command::Eval { checkpoint, data, head, split } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            Ok(eval::run(&checkpoint, &data, head, split)?.line() + "\n")
        }
        Command::Inspect { trace_log, out, bins } => {
            let (report, dir) = inspect::run(&trace_log, out.as_deref(), bins)?;
            Ok(format!("{}wrote {} and {} to {}\n", report.summary(), inspect::USAGE_FILE, inspect::HIST_FILE, dir.display()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("hrn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
