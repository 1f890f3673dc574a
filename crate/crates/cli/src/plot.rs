//! Self-contained SVG figures from metric traces: no renderer, no fonts, no
//! external assets, so CI can diff the output textually.
//!
//! Each metric gets one file with one `<polyline>` per trace.  Convergence
//! metrics use a log10 y axis; nonpositive values cannot appear on it and
//! are skipped.  The `<svg>` root carries `data-*` attributes describing the
//! exact data-to-pixel mapping, so tests (or tools) can recompute every
//! plotted coordinate from the CSV and compare within print quantization.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use gtvr_core::engine::{MetricRecord, MetricsTrace};
use gtvr_core::{Error, Result};

use crate::PlotArgs;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const PLOT_LEFT: f64 = 72.0;
const PLOT_RIGHT: f64 = WIDTH - 180.0; // legend strip on the right
const PLOT_TOP: f64 = 36.0;
const PLOT_BOTTOM: f64 = HEIGHT - 48.0;

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

struct MetricSpec {
    name: &'static str,
    log_scale: bool,
    extract: fn(&MetricRecord) -> Option<f64>,
}

const METRICS: &[MetricSpec] = &[
    MetricSpec {
        name: "gap",
        log_scale: true,
        extract: |r| Some(r.gap),
    },
    MetricSpec {
        name: "consensus_err",
        log_scale: true,
        extract: |r| Some(r.consensus_err),
    },
    MetricSpec {
        name: "tracking_err",
        log_scale: true,
        extract: |r| Some(r.tracking_err),
    },
    MetricSpec {
        name: "msd",
        log_scale: true,
        extract: |r| Some(r.msd),
    },
    MetricSpec {
        name: "test_acc",
        log_scale: false,
        extract: |r| r.test_acc,
    },
];

/// Points are in axis domain already: x = epoch, y = log10(value) on log
/// axes, the raw value otherwise.
struct Curve {
    label: String,
    color: &'static str,
    points: Vec<(f64, f64)>,
}

pub fn cmd_plot(args: &PlotArgs) -> Result<ExitCode> {
    let mut traces = Vec::with_capacity(args.traces.len());
    for path in &args.traces {
        let file = fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot open trace {}: {e}", path.display())))?;
        let trace = MetricsTrace::read_csv(BufReader::new(file))
            .map_err(|e| Error::Config(format!("trace {}: {e}", path.display())))?;
        if trace.records.is_empty() {
            return Err(Error::Config(format!(
                "trace {} has no records to plot",
                path.display()
            )));
        }
        traces.push(trace);
    }
    let labels = legend_labels(&args.traces);

    fs::create_dir_all(&args.out)?;
    let mut wrote_any = false;
    for metric in METRICS {
        let mut curves = Vec::new();
        for (i, trace) in traces.iter().enumerate() {
            let points: Vec<(f64, f64)> = trace
                .records
                .iter()
                .filter_map(|r| {
                    let v = (metric.extract)(r)?;
                    let y = if metric.log_scale {
                        if v > 0.0 && v.is_finite() {
                            v.log10()
                        } else {
                            return None;
                        }
                    } else if v.is_finite() {
                        v
                    } else {
                        return None;
                    };
                    Some((r.epoch, y))
                })
                .collect();
            if points.is_empty() {
                continue;
            }
            curves.push(Curve {
                label: labels[i].clone(),
                color: PALETTE[i % PALETTE.len()],
                points,
            });
        }
        if curves.is_empty() {
            // e.g. test_acc on runs without a held-out set
            continue;
        }
        let path = args.out.join(format!("{}.svg", metric.name));
        fs::write(&path, render(metric, &curves))?;
        println!("wrote {} ({} curves)", path.display(), curves.len());
        wrote_any = true;
    }
    if !wrote_any {
        return Err(Error::Config(
            "no metric had any plottable value across the given traces".into(),
        ));
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// legend labels

/// Label a trace from its provenance sibling (`method kind n=N`), falling
/// back to path names; duplicate labels pick up the step size, then an
/// occurrence index.
fn legend_labels(paths: &[PathBuf]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::with_capacity(paths.len());
    let mut alphas: Vec<Option<f64>> = Vec::with_capacity(paths.len());
    for path in paths {
        let (label, alpha) = match provenance_label(path) {
            Some(pair) => pair,
            None => (path_label(path), None),
        };
        labels.push(label);
        alphas.push(alpha);
    }
    let duplicated = |labels: &[String], x: &String| labels.iter().filter(|l| *l == x).count() > 1;
    let dups: Vec<bool> = labels.iter().map(|l| duplicated(&labels, l)).collect();
    for (i, dup) in dups.iter().enumerate() {
        if *dup {
            if let Some(a) = alphas[i] {
                labels[i] = format!("{} a={a:.3e}", labels[i]);
            }
        }
    }
    let dups: Vec<bool> = labels.iter().map(|l| duplicated(&labels, l)).collect();
    let mut seen = 0;
    for (i, dup) in dups.iter().enumerate() {
        if *dup {
            seen += 1;
            labels[i] = format!("{} #{seen}", labels[i]);
        }
    }
    labels
}

fn provenance_label(trace: &Path) -> Option<(String, Option<f64>)> {
    let path = trace.parent()?.join("provenance.json");
    let text = fs::read_to_string(path).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    let method = v["config"]["algo"]["method"].as_str()?;
    let kind = v["config"]["graph"]["kind"].as_str()?;
    let n = v["config"]["graph"]["n"].as_u64()?;
    Some((
        format!("{method} {kind} n={n}"),
        v["resolved_alpha"].as_f64(),
    ))
}

/// `dir/trace.csv` is named by its directory; anything else by file stem.
fn path_label(trace: &Path) -> String {
    let stem = trace
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    if stem == "trace" {
        if let Some(dir) = trace.parent().and_then(|p| p.file_name()) {
            let dir = dir.to_string_lossy();
            if !dir.is_empty() {
                return dir.into_owned();
            }
        }
    }
    stem
}

// ---------------------------------------------------------------------------
// rendering

fn map_range(v: f64, lo: f64, hi: f64, plo: f64, phi: f64) -> f64 {
    plo + (v - lo) / (hi - lo) * (phi - plo)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 1e4 || v.abs() < 1e-3 {
        return format!("{v:.2e}");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn render(metric: &MetricSpec, curves: &[Curve]) -> String {
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in curves {
        for &(x, y) in &c.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if x_max - x_min < 1e-9 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_max - y_min < 1e-9 {
        y_min -= 0.5;
        y_max += 0.5;
    }

    let px = |x: f64| map_range(x, x_min, x_max, PLOT_LEFT, PLOT_RIGHT);
    let py = |y: f64| map_range(y, y_min, y_max, PLOT_BOTTOM, PLOT_TOP);

    let scale = if metric.log_scale { "log10" } else { "linear" };
    let mut svg = String::new();
    svg.push_str(&format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"monospace\" font-size=\"12\" ",
            "data-y-scale=\"{scale}\" data-x-min=\"{xmin}\" data-x-max=\"{xmax}\" ",
            "data-y-min=\"{ymin}\" data-y-max=\"{ymax}\" data-plot-left=\"{pl}\" ",
            "data-plot-right=\"{pr}\" data-plot-top=\"{pt}\" data-plot-bottom=\"{pb}\">\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        scale = scale,
        xmin = x_min,
        xmax = x_max,
        ymin = y_min,
        ymax = y_max,
        pl = PLOT_LEFT,
        pr = PLOT_RIGHT,
        pt = PLOT_TOP,
        pb = PLOT_BOTTOM,
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // gridlines and tick labels
    let y_axis_name = if metric.log_scale {
        format!("{} (log scale)", metric.name)
    } else {
        metric.name.to_string()
    };
    svg.push_str(&format!(
        "<text x=\"{PLOT_LEFT}\" y=\"{}\" font-size=\"14\">{}</text>\n",
        PLOT_TOP - 14.0,
        escape(&y_axis_name),
    ));
    for (t, label) in y_ticks(metric.log_scale, y_min, y_max) {
        let y = py(t);
        svg.push_str(&format!(
            "<line x1=\"{PLOT_LEFT}\" y1=\"{y:.2}\" x2=\"{PLOT_RIGHT}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            PLOT_LEFT - 6.0,
            y + 4.0,
            escape(&label),
        ));
    }
    for i in 0..5 {
        let x_val = x_min + (x_max - x_min) * i as f64 / 4.0;
        let x = px(x_val);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{PLOT_TOP}\" x2=\"{x:.2}\" y2=\"{PLOT_BOTTOM}\" stroke=\"#dddddd\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            PLOT_BOTTOM + 18.0,
            escape(&fmt_tick(x_val)),
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">epoch</text>\n",
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        PLOT_BOTTOM + 34.0,
    ));
    svg.push_str(&format!(
        "<rect x=\"{PLOT_LEFT}\" y=\"{PLOT_TOP}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#333333\"/>\n",
        PLOT_RIGHT - PLOT_LEFT,
        PLOT_BOTTOM - PLOT_TOP,
    ));

    // curves
    for c in curves {
        let points: Vec<String> = c
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            c.color,
            points.join(" "),
        ));
    }

    // legend
    for (i, c) in curves.iter().enumerate() {
        let y = PLOT_TOP + 18.0 * (i as f64 + 1.0);
        let x = PLOT_RIGHT + 12.0;
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            y - 4.0,
            x + 22.0,
            y - 4.0,
            c.color,
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{y:.2}\">{}</text>\n",
            x + 28.0,
            escape(&c.label),
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

/// Decade ticks on log axes, five evenly spaced ticks otherwise.
fn y_ticks(log_scale: bool, y_min: f64, y_max: f64) -> Vec<(f64, String)> {
    if log_scale {
        let lo = y_min.ceil() as i64;
        let hi = y_max.floor() as i64;
        if lo > hi {
            // the whole range sits inside one decade
            return vec![(y_min, fmt_tick(y_min)), (y_max, fmt_tick(y_max))];
        }
        let span = (hi - lo).max(1) as usize;
        let step = span.div_ceil(8).max(1) as i64;
        (lo..=hi)
            .step_by(step as usize)
            .map(|k| (k as f64, format!("1e{k}")))
            .collect()
    } else {
        (0..5)
            .map(|i| {
                let v = y_min + (y_max - y_min) * i as f64 / 4.0;
                (v, fmt_tick(v))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
