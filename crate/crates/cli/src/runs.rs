//! The config-driven subcommands: single runs, sweeps over one config key,
//! and the speedup study.  Each run's artifacts land in their own directory,
//! so concurrent sweep runs never contend on a file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use gtvr_core::engine::{self, RunOutput, RunStatus};
use gtvr_core::{Error, Result};
use rayon::prelude::*;

use crate::overrides::{self, Overrides};
use crate::{RunArgs, SpeedupArgs, SweepArgs};

/// Writes trace.csv, provenance.json, and status.json under `dir`.
fn write_run_artifacts(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    out.trace.write_csv(&mut csv)?;
    fs::write(dir.join("trace.csv"), csv)?;
    fs::write(
        dir.join("provenance.json"),
        serde_json::to_vec_pretty(&out.provenance)?,
    )?;
    fs::write(
        dir.join("status.json"),
        serde_json::to_vec_pretty(&out.status)?,
    )?;
    Ok(())
}

fn describe(status: &RunStatus) -> String {
    match status {
        RunStatus::BudgetExhausted => "ran the full iteration budget".into(),
        RunStatus::ReachedTarget { iter } => format!("reached the target gap at iteration {iter}"),
        RunStatus::Diverged { iter } => format!("diverged at iteration {iter}"),
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = overrides::load_config(&args.config.config, &Overrides::per_run(&args.config))?;
    let output = engine::run(&cfg)?;
    write_run_artifacts(&args.out, &output)?;
    println!(
        "wrote {} ({} records)",
        args.out.join("trace.csv").display(),
        output.trace.records.len()
    );
    println!("wrote {}", args.out.join("provenance.json").display());
    println!("status: {}", describe(&output.status));
    Ok(match output.status {
        RunStatus::Diverged { .. } => ExitCode::from(2),
        _ => ExitCode::SUCCESS,
    })
}

// ---------------------------------------------------------------------------
// sweep

/// Directory-safe form of an axis value; distinct values that sanitize alike
/// are disambiguated by the caller.
fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '+' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

struct SweepRun {
    value: String,
    dir: PathBuf,
    prepared: Result<engine::RunConfig>,
}

struct SweepRow {
    value: String,
    sigma: Option<f64>,
    final_gap: Option<f64>,
    epochs: Option<f64>,
    note: String,
    /// Exit-code contribution: 0 ok, 2 diverged, 1/3 per error kind.
    severity: u8,
}

fn run_sweep_entry(entry: &SweepRun, threshold: f64) -> SweepRow {
    let cfg = match &entry.prepared {
        Ok(cfg) => cfg,
        Err(e) => {
            return SweepRow {
                value: entry.value.clone(),
                sigma: None,
                final_gap: None,
                epochs: None,
                note: format!("config error: {e}"),
                severity: crate::exit_code(e),
            }
        }
    };
    match engine::run(cfg).and_then(|out| {
        write_run_artifacts(&entry.dir, &out)?;
        Ok(out)
    }) {
        Ok(out) => SweepRow {
            value: entry.value.clone(),
            sigma: Some(out.provenance.sigma),
            final_gap: out.trace.final_record().map(|r| r.gap),
            epochs: out.trace.epochs_to_gap(threshold),
            note: describe(&out.status),
            severity: match out.status {
                RunStatus::Diverged { .. } => 2,
                _ => 0,
            },
        },
        Err(e) => SweepRow {
            value: entry.value.clone(),
            sigma: None,
            final_gap: None,
            epochs: None,
            note: format!("error: {e}"),
            severity: crate::exit_code(&e),
        },
    }
}

fn optional(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode> {
    if args.values.is_empty() {
        return Err(Error::Config("--values needs at least one value".into()));
    }
    if !(args.threshold.is_finite() && args.threshold > 0.0) {
        return Err(Error::Config(format!(
            "--threshold must be positive, got {}",
            args.threshold
        )));
    }
    let base = overrides::load_table(&args.config.config, &Overrides::for_sweep(&args.config))?;
    let axis = overrides::resolve_key(args.axis.trim());

    // Prepare and validate every run before any computation; a bad value
    // becomes a summary row, not an abort.
    let mut runs: Vec<SweepRun> = Vec::with_capacity(args.values.len());
    for raw in &args.values {
        let value = raw.trim().to_string();
        let mut table = base.clone();
        let prepared = overrides::set_key(&mut table, axis, overrides::parse_value(&value))
            .and_then(|()| overrides::finish(table));
        let mut name = format!("{}={}", sanitize(args.axis.trim()), sanitize(&value));
        let taken = |n: &str, runs: &[SweepRun]| runs.iter().any(|r| r.dir.ends_with(n));
        if taken(&name, &runs) {
            let mut i = 2;
            while taken(&format!("{name}-{i}"), &runs) {
                i += 1;
            }
            name = format!("{name}-{i}");
        }
        runs.push(SweepRun {
            value,
            dir: args.out.join(name),
            prepared,
        });
    }

    let workers = args.config.jobs.unwrap_or(1).max(1).min(runs.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let rows: Vec<SweepRow> =
        pool.install(|| runs.par_iter().map(|r| run_sweep_entry(r, args.threshold)).collect());

    fs::create_dir_all(&args.out)?;
    let mut summary = String::from("value,sigma,final_gap,epochs_to_threshold\n");
    for row in &rows {
        summary.push_str(&format!(
            "{},{},{},{}\n",
            row.value,
            optional(row.sigma),
            optional(row.final_gap),
            optional(row.epochs),
        ));
        println!("{}={}: {}", args.axis.trim(), row.value, row.note);
    }
    let summary_path = args.out.join("summary.csv");
    fs::write(&summary_path, summary)?;
    println!("wrote {}", summary_path.display());

    let severity = rows.iter().map(|r| r.severity).max().unwrap_or(0);
    Ok(ExitCode::from(severity))
}

// ---------------------------------------------------------------------------
// speedup

pub fn cmd_speedup(args: &SpeedupArgs) -> Result<ExitCode> {
    if args.nodes.is_empty() {
        return Err(Error::Config("--nodes needs at least one node count".into()));
    }
    let cfg = overrides::load_config(&args.config.config, &Overrides::per_run(&args.config))?;
    let rows = engine::speedup_study(&cfg, &args.nodes, args.target_gap)?;

    fs::create_dir_all(&args.out)?;
    let mut csv =
        String::from("n,sigma,target_gap,centralized_evals,decentralized_evals,ratio,reached\n");
    for row in &rows {
        let reached = row.ratio.is_some();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.n,
            row.sigma,
            row.target_gap,
            row.centralized_evals.map(|v| v.to_string()).unwrap_or_default(),
            row.decentralized_evals.map(|v| v.to_string()).unwrap_or_default(),
            optional(row.ratio),
            reached,
        ));
        match row.ratio {
            Some(r) => println!("n={}: speedup {r:.3}", row.n),
            None => println!("n={}: target gap unreached within the budget", row.n),
        }
    }
    let path = args.out.join("speedup.csv");
    fs::write(&path, csv)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
