//! Layered configuration: a TOML file, then `GTVR_*` environment variables,
//! then `--seed`/`--jobs` shorthands, then `--set KEY=VALUE` flags.  Later
//! layers win.  Keys are dotted paths into the config (`algo.alpha`); a few
//! common leaves also have short aliases (`alpha`).

use std::fs;
use std::path::Path;

use gtvr_core::engine::RunConfig;
use gtvr_core::{Error, Result};
use toml::value::{Table, Value};

use crate::ConfigArgs;

/// Shorthand names accepted wherever a config key is expected, including the
/// sweep axis and `GTVR_*` variables (`GTVR_ALPHA`, `GTVR_TOPOLOGY`, ...).
const ALIASES: &[(&str, &str)] = &[
    ("topology", "graph.kind"),
    ("n", "graph.n"),
    ("weight_rule", "graph.weight_rule"),
    ("method", "algo.method"),
    ("alpha", "algo.alpha"),
    ("svrg_period", "algo.svrg_period"),
    ("iters", "run.iters"),
    ("seed", "run.seed"),
    ("jobs", "run.jobs"),
    ("cadence", "run.cadence"),
    ("target_gap", "run.target_gap"),
];

pub fn resolve_key(key: &str) -> &str {
    ALIASES
        .iter()
        .find(|(short, _)| *short == key)
        .map_or(key, |(_, full)| full)
}

/// Overrides carried by the command line.  `jobs` is `None` for sweeps,
/// where the flag bounds the run pool instead of each run's workers.
pub struct Overrides<'a> {
    pub sets: &'a [String],
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl<'a> Overrides<'a> {
    pub fn per_run(args: &'a ConfigArgs) -> Self {
        Overrides {
            sets: &args.set,
            seed: args.seed,
            jobs: args.jobs,
        }
    }

    pub fn for_sweep(args: &'a ConfigArgs) -> Self {
        Overrides {
            sets: &args.set,
            seed: args.seed,
            jobs: None,
        }
    }
}

/// Values use TOML scalar syntax where it parses (`0.02`, `true`, `[1, 2]`)
/// and fall back to a bare string, so `topology=ring` and `alpha=auto` work
/// without quoting.
pub fn parse_value(raw: &str) -> Value {
    let probe = format!("v = {raw}");
    match probe.parse::<Table>() {
        // the length guard stops a value with embedded newlines from
        // smuggling extra keys past the schema
        Ok(mut t) if t.len() == 1 => t.remove("v").unwrap(),
        _ => Value::String(raw.to_string()),
    }
}

/// Sets `table[dotted]`, creating intermediate tables along the path.
pub fn set_key(table: &mut Table, dotted: &str, value: Value) -> Result<()> {
    let segments: Vec<&str> = dotted.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!(
            "override key {dotted:?} has an empty segment"
        )));
    }
    let (leaf, path) = segments.split_last().expect("split on nonempty string");
    let mut cursor = table;
    for seg in path {
        cursor = cursor
            .entry(seg.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::Config(format!(
                    "override key {dotted:?} descends into {seg:?}, which is not a table"
                ))
            })?;
    }
    cursor.insert((*leaf).to_string(), value);
    Ok(())
}

/// `GTVR_*` variables as (dotted key, raw value), sorted for a deterministic
/// application order.  Double underscores separate path segments, so
/// `GTVR_ALGO__ALPHA=0.02` sets `algo.alpha` and single underscores survive
/// inside names like `GTVR_GRAPH__WEIGHT_RULE`.
fn env_overrides() -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = std::env::vars()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix("GTVR_")?;
            Some((rest.to_lowercase().replace("__", "."), v))
        })
        .collect();
    pairs.sort();
    pairs
}

/// Reads the config file and applies every override layer, leaving the
/// result as a plain table so sweeps can still vary one key per run.
pub fn load_table(path: &Path, ov: &Overrides) -> Result<Table> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut table: Table = text
        .parse()
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    for (key, raw) in env_overrides() {
        set_key(&mut table, resolve_key(&key), parse_value(&raw))?;
    }
    if let Some(seed) = ov.seed {
        set_key(&mut table, "run.seed", int_value(seed, "--seed")?)?;
    }
    if let Some(jobs) = ov.jobs {
        set_key(&mut table, "run.jobs", int_value(jobs as u64, "--jobs")?)?;
    }
    for spec in ov.sets {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set needs KEY=VALUE, got {spec:?}")))?;
        set_key(&mut table, resolve_key(key.trim()), parse_value(raw.trim()))?;
    }
    Ok(table)
}

fn int_value(v: u64, flag: &str) -> Result<Value> {
    i64::try_from(v)
        .map(Value::Integer)
        .map_err(|_| Error::Config(format!("{flag} {v} exceeds the config integer range")))
}

/// Deserializes and validates; all schema errors surface here, before any
/// computation.
pub fn finish(table: Table) -> Result<RunConfig> {
    let cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("config schema: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, ov: &Overrides) -> Result<RunConfig> {
    finish(load_table(path, ov)?)
}

// ---------------------------------------------------------------------------
