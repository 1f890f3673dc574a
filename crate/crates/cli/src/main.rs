//! Command-line front end for the decentralized optimization engine: single
//! experiment runs, parameter sweeps, speedup studies, built-in property
//! suites, and SVG figures from metric traces.
//!
//! Every subcommand validates its full configuration before any computation
//! starts, and writes files only under the directory given by `--out`.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 usage or
//! configuration error, 2 numerical divergence, 3 failed numeric oracle.

mod overrides;
mod plot;
mod runs;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gtvr_core::Error;

#[derive(Debug, Parser)]
#[command(name = "gtvr", version, about = "Decentralized variance-reduced optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment; writes trace.csv, provenance.json, status.json.
    Run(RunArgs),
    /// Run the same experiment over several values of one config key.
    Sweep(SweepArgs),
    /// Per-node gradient work against a single node holding all the data.
    Speedup(SpeedupArgs),
    /// Run the built-in property suites and print a pass/fail table.
    Verify(VerifyArgs),
    /// Render metric trace CSVs as self-contained SVG figures.
    Plot(PlotArgs),
}

/// Flags shared by every config-driven subcommand.  Override precedence,
/// lowest to highest: config file, `GTVR_*` environment variables,
/// `--seed`/`--jobs`, `--set`.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment description (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override one config key, e.g. `--set algo.alpha=0.02`; repeatable.
    /// Short aliases work too: `--set alpha=0.02`, `--set topology=ring`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set run.seed=N`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads: per-run gradient workers for `run` and `speedup`,
    /// number of concurrent runs for `sweep`.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; each run writes under `<DIR>/<axis>=<value>/`.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Config key to vary, dotted or aliased (`topology`, `algo.alpha`, ...).
    #[arg(long, value_name = "KEY")]
    axis: String,
    /// Values for the axis, parsed like `--set` values.
    #[arg(long, value_name = "V1,V2,...", value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Gap threshold for the summary's epochs_to_threshold column.
    #[arg(long, value_name = "GAP", default_value_t = 1e-10)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct SpeedupArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for speedup.csv.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Node counts to study.
    #[arg(long, value_name = "N1,N2,...", value_delimiter = ',', required = true)]
    nodes: Vec<usize>,
    /// Optimality gap both the decentralized and the single-node run must
    /// reach for a row to count.
    #[arg(long, value_name = "GAP", default_value_t = 1e-13)]
    target_gap: f64,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Negative-control hook: corrupt one weight matrix entry before the
    /// double-stochasticity suite, which must then fail.
    #[arg(long)]
    corrupt_weights: bool,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Metric trace CSVs; a provenance.json next to a trace names its curve.
    #[arg(long, value_name = "CSV", num_args = 1.., required = true)]
    traces: Vec<PathBuf>,
    /// Output directory; one SVG per metric lands here.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn main() -> ExitCode {
    // die quietly on a closed pipe (`gtvr verify | head`) instead of
    // panicking inside println!
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    // clap's own exit code for usage errors is 2, which this contract
    // reserves for divergence; remap to 1 here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => runs::cmd_run(&args),
        Command::Sweep(args) => runs::cmd_sweep(&args),
        Command::Speedup(args) => runs::cmd_speedup(&args),
        Command::Verify(args) => verify::cmd_verify(&args),
        Command::Plot(args) => plot::cmd_plot(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Errors from the numeric oracles themselves (reference solver, spectral
/// gap) map to 3; everything else reaching main is a config/usage problem.
pub(crate) fn exit_code(err: &Error) -> u8 {
    match err {
        Error::ReferenceStall { .. } | Error::PowerIterationStall { .. } => 3,
        _ => 1,
    }
}
