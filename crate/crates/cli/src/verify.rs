//! Built-in property suites over small instances: fast re-checks of the
//! invariants the library is built on, runnable in CI or after a local
//! change without the full test harness.

use std::process::ExitCode;

use gtvr_core::algos::{Method, SagaTable, SvrgSnapshot};
use gtvr_core::engine::{
    self, AlgoConfig, GraphConfig, ObjectiveConfig, RunConfig, RunSection, Setting, Simulation,
    WeightRule,
};
use gtvr_core::graph::{
    build_complete, build_exponential, build_geometric, build_ring, metropolis_weights,
    spectral_gap, uniform_weights, MixingMatrix, TopologyKind,
};
use gtvr_core::objective::{Objective, SmoothnessConstants};
use gtvr_core::rng::Stream;
use gtvr_core::{dataio, tuning, Result};

use crate::VerifyArgs;

type Suite = fn(&VerifyArgs) -> std::result::Result<(), String>;

pub fn cmd_verify(args: &VerifyArgs) -> Result<ExitCode> {
    let suites: &[(&str, Suite)] = &[
        ("double stochasticity", suite_double_stochasticity),
        ("spectral gaps", suite_spectral_gaps),
        ("tracking identity", suite_tracking_identity),
        ("estimator unbiasedness", suite_unbiasedness),
        ("finite-difference gradients", suite_gradients),
        ("step-size tuning landmarks", suite_tuning_landmarks),
        ("reference solutions", suite_references),
        ("determinism", suite_determinism),
    ];
    let mut passed = 0;
    println!("{:<30} result", "suite");
    for (name, suite) in suites {
        match suite(args) {
            Ok(()) => {
                passed += 1;
                println!("{name:<30} pass");
            }
            Err(msg) => println!("{name:<30} FAIL: {msg}"),
        }
    }
    println!("{passed} of {} suites passed", suites.len());
    Ok(if passed == suites.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

// ---------------------------------------------------------------------------
// helpers

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gaussian_vec(seed: u64, tag: u64, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    Stream::new(seed, &[tag]).fill_gaussian(&mut out);
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Two-node logistic objective over synthetic data; small enough for
/// exhaustive estimator averages.
fn small_logistic() -> std::result::Result<Objective, String> {
    let samples = dataio::synth_logistic(21, 6, 5, 1.0).map_err(err)?;
    let nodes = vec![samples[..9].to_vec(), samples[9..].to_vec()];
    Objective::logistic(nodes, 0.05).map_err(err)
}

fn small_quadratic() -> std::result::Result<Objective, String> {
    let mut nodes = Vec::new();
    for i in 0..3usize {
        let centers: Vec<Vec<f64>> = (0..4)
            .map(|t| gaussian_vec(41, (i * 10 + t) as u64, 5))
            .collect();
        nodes.push(centers);
    }
    Objective::quadratic(nodes).map_err(err)
}

// ---------------------------------------------------------------------------
// suites

/// Row and column sums of every supported weight construction equal 1.
/// With the negative-control hook, one entry is perturbed first and the
/// check must trip.
fn suite_double_stochasticity(args: &VerifyArgs) -> std::result::Result<(), String> {
    let check = |weights: &[Vec<f64>], label: &str| -> std::result::Result<(), String> {
        let n = weights.len();
        for (i, row) in weights.iter().enumerate() {
            if row.len() != n {
                return Err(format!("{label}: row {i} has {} entries", row.len()));
            }
            for (j, &w) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&w) {
                    return Err(format!("{label}: entry ({i}, {j}) = {w} outside [0, 1]"));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(format!("{label}: row {i} sums to {sum}"));
            }
        }
        for j in 0..n {
            let sum: f64 = weights.iter().map(|row| row[j]).sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(format!("{label}: column {j} sums to {sum}"));
            }
        }
        Ok(())
    };

    // uniform weights need degree-regular graphs; geometric graphs are
    // irregular and get Metropolis weights instead
    let ring = build_ring(8).map_err(err)?;
    let expo = build_exponential(8).map_err(err)?;
    let complete = build_complete(8).map_err(err)?;
    let geo = build_geometric(8, 0.8, 3).map_err(err)?;
    let cases: Vec<(String, MixingMatrix)> = vec![
        ("ring/uniform".into(), uniform_weights(&ring).map_err(err)?),
        ("exponential/uniform".into(), uniform_weights(&expo).map_err(err)?),
        ("complete/uniform".into(), uniform_weights(&complete).map_err(err)?),
        ("complete/metropolis".into(), metropolis_weights(&complete).map_err(err)?),
        ("geometric/metropolis".into(), metropolis_weights(&geo).map_err(err)?),
    ];

    if args.corrupt_weights {
        // negative control: break one entry and demand detection
        let mut corrupted: Vec<Vec<f64>> = cases[0].1.weights().to_vec();
        corrupted[0][0] += 1e-3;
        check(&corrupted, "ring/uniform (corrupted)")?;
    }
    for (label, mixing) in &cases {
        check(mixing.weights(), label)?;
    }
    Ok(())
}

/// Spectral gaps of the reference topologies at n = 10 against their known
/// values, plus a 2x2 matrix whose second eigenvalue is analytic.
fn suite_spectral_gaps(_: &VerifyArgs) -> std::result::Result<(), String> {
    let cases = [
        (TopologyKind::Ring, 0.951_056_516_295_153_5),
        (TopologyKind::Exponential, 0.6),
        (TopologyKind::Complete, 0.0),
    ];
    for (kind, expected) in cases {
        let cfg = GraphConfig {
            kind,
            n: 10,
            weight_rule: WeightRule::Uniform,
            seed: 0,
            radius: None,
            edges: None,
        };
        let sigma = cfg.build().map_err(err)?.1.sigma();
        if (sigma - expected).abs() > 1e-3 {
            return Err(format!("{kind:?} n=10: sigma {sigma}, expected {expected}"));
        }
    }

    // W = [[1-a, a], [a, 1-a]] has eigenvalues 1 and 1 - 2a
    let a = 0.3;
    let sigma = spectral_gap(&[vec![1.0 - a, a], vec![a, 1.0 - a]]).map_err(err)?;
    if (sigma - 0.4).abs() > 1e-9 {
        return Err(format!("analytic 2x2: sigma {sigma}, expected 0.4"));
    }

    let geo = build_geometric(8, 0.8, 3).map_err(err)?;
    let sigma = metropolis_weights(&geo).map_err(err)?.sigma();
    if !(0.0..1.0).contains(&sigma) {
        return Err(format!("geometric n=8: sigma {sigma} outside [0, 1)"));
    }
    Ok(())
}

fn tracking_config(method: Method) -> RunConfig {
    RunConfig {
        graph: GraphConfig {
            kind: TopologyKind::Exponential,
            n: 4,
            weight_rule: WeightRule::Uniform,
            seed: 0,
            radius: None,
            edges: None,
        },
        objective: ObjectiveConfig::Quadratic {
            samples: 16,
            dim: 6,
            jitter: 1.0,
            node_offset: 0.5,
            data_seed: 7,
        },
        partition: Default::default(),
        algo: AlgoConfig {
            method,
            alpha: Setting::Value(0.05),
            svrg_period: if method == Method::GtSvrg {
                Setting::Value(30)
            } else {
                Setting::default()
            },
        },
        run: RunSection {
            iters: 200,
            target_gap: None,
            seed: 11,
            cadence: Setting::default(),
            jobs: 1,
        },
    }
}

/// mean(y) equals mean(r_prev) exactly (to 1e-11) at every iteration of both
/// gradient-tracking variance-reduced methods.
fn suite_tracking_identity(_: &VerifyArgs) -> std::result::Result<(), String> {
    for method in [Method::GtSaga, Method::GtSvrg] {
        let cfg = tracking_config(method);
        let mut sim = Simulation::from_config(&cfg).map_err(err)?;
        let dim = sim.objective().dim();
        let n = cfg.graph.n as f64;
        for k in 0..200u64 {
            sim.step().map_err(err)?;
            let mut worst = 0.0f64;
            for d in 0..dim {
                let mean_y: f64 = sim.states().iter().map(|s| s.y()[d]).sum::<f64>() / n;
                let mean_r: f64 = sim.states().iter().map(|s| s.r_prev()[d]).sum::<f64>() / n;
                worst = worst.max((mean_y - mean_r).abs());
            }
            if worst > 1e-11 {
                return Err(format!("{method} iteration {}: drift {worst:e}", k + 1));
            }
        }
    }
    Ok(())
}

/// Averaged over every component index, both estimators reduce to the batch
/// gradient at the query point.
fn suite_unbiasedness(_: &VerifyArgs) -> std::result::Result<(), String> {
    let obj = small_logistic()?;
    let dim = obj.dim();
    for rep in 0..10u64 {
        let node = (rep % 2) as usize;
        let m = obj.components(node);
        let x_new = gaussian_vec(900 + rep, 1, dim);
        let batch = obj.batch_gradient(node, &x_new).map_err(err)?;
        let tol = 1e-13 * norm(&batch).max(1.0);

        let points: Vec<Vec<f64>> = (0..m)
            .map(|j| gaussian_vec(900 + rep, 100 + j as u64, dim))
            .collect();
        let table = SagaTable::from_points(&obj, node, &points).map_err(err)?;
        let mut mean = vec![0.0; dim];
        for j in 0..m {
            let fresh = obj.component_gradient(node, j, &x_new).map_err(err)?;
            for (s, e) in mean.iter_mut().zip(table.estimate(j, &fresh)) {
                *s += e;
            }
        }
        mean.iter_mut().for_each(|s| *s /= m as f64);
        let diff = max_abs_diff(&mean, &batch);
        if diff > tol {
            return Err(format!("saga rep {rep}: bias {diff:e} > {tol:e}"));
        }

        let snapshot_at = gaussian_vec(900 + rep, 2, dim);
        let snapshot = SvrgSnapshot::new(&obj, node, &snapshot_at).map_err(err)?;
        let mut mean = vec![0.0; dim];
        for j in 0..m {
            let fresh = obj.component_gradient(node, j, &x_new).map_err(err)?;
            let est = snapshot.estimate(&obj, node, j, &fresh).map_err(err)?;
            for (s, e) in mean.iter_mut().zip(est) {
                *s += e;
            }
        }
        mean.iter_mut().for_each(|s| *s /= m as f64);
        let diff = max_abs_diff(&mean, &batch);
        if diff > tol {
            return Err(format!("svrg rep {rep}: bias {diff:e} > {tol:e}"));
        }
    }
    Ok(())
}

/// Component and batch gradients against central finite differences.
fn suite_gradients(_: &VerifyArgs) -> std::result::Result<(), String> {
    let fd = |f: &dyn Fn(&[f64]) -> f64, x: &[f64]| -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|d| {
                let mut hi = x.to_vec();
                let mut lo = x.to_vec();
                hi[d] += h;
                lo[d] -= h;
                (f(&hi) - f(&lo)) / (2.0 * h)
            })
            .collect()
    };
    let mut probes = 0;
    for (tag, obj) in [(0u64, small_logistic()?), (1, small_quadratic()?)] {
        for rep in 0..3u64 {
            for node in 0..obj.num_nodes() {
                let x = gaussian_vec(70 + tag, rep * 10 + node as u64, obj.dim());
                for j in 0..obj.components(node).min(3) {
                    let grad = obj.component_gradient(node, j, &x).map_err(err)?;
                    let approx = fd(&|p| obj.component_value(node, j, p).unwrap(), &x);
                    let diff = max_abs_diff(&grad, &approx);
                    let tol = 1e-5 * norm(&grad).max(1.0);
                    if diff > tol {
                        return Err(format!(
                            "component ({node}, {j}) rep {rep}: fd mismatch {diff:e}"
                        ));
                    }
                    probes += 1;
                }
                let grad = obj.batch_gradient(node, &x).map_err(err)?;
                let approx = fd(&|p| obj.batch_value(node, p).unwrap(), &x);
                if max_abs_diff(&grad, &approx) > 1e-5 * norm(&grad).max(1.0) {
                    return Err(format!("batch gradient node {node} rep {rep}: fd mismatch"));
                }
                probes += 1;
            }
        }
    }
    if probes < 24 {
        return Err(format!("only {probes} probes ran"));
    }
    Ok(())
}

/// Frozen tuning outputs for the unit problem (L = mu = 1, sigma = 0,
/// m = 64) and the big-data regime boundary.
fn suite_tuning_landmarks(_: &VerifyArgs) -> std::result::Result<(), String> {
    let unit = SmoothnessConstants {
        mu: 1.0,
        l_smooth: 1.0,
    };
    let close = |got: f64, want: f64| (got - want).abs() <= 1e-12 * want.abs().max(1.0);

    let saga = tuning::saga_tuning(unit, 0.0, 64, 64).map_err(err)?;
    if !close(saga.alpha, 1.0 / 320.0) {
        return Err(format!("saga alpha {} != 1/320", saga.alpha));
    }
    if !close(saga.rate_complement, 1.0 / 1280.0) {
        return Err(format!("saga complement {} != 1/1280", saga.rate_complement));
    }
    if !close(saga.rate, 1.0 - 1.0 / 1280.0) {
        return Err(format!("saga rate {}", saga.rate));
    }

    let svrg = tuning::svrg_tuning(unit, 0.0).map_err(err)?;
    if !close(svrg.alpha, 1.0 / 187.0) {
        return Err(format!("svrg alpha {} != 1/187", svrg.alpha));
    }
    if svrg.svrg_t != Some(7927) {
        return Err(format!("svrg period {:?} != 7927", svrg.svrg_t));
    }
    if !close(svrg.rate, 0.7) {
        return Err(format!("svrg rate {}", svrg.rate));
    }

    if !tuning::big_data_check(8000, 8000, 1.0, 0.0) {
        return Err("big-data check rejected an 8000-sample unit problem".into());
    }
    if tuning::big_data_check(10, 10, 100.0, 0.99) {
        return Err("big-data check accepted 10 samples at Q = 100".into());
    }
    Ok(())
}

/// The reference solver: exact for quadratics, gradient-tolerance for
/// logistic.
fn suite_references(_: &VerifyArgs) -> std::result::Result<(), String> {
    let obj = small_quadratic()?;
    let reference = engine::solve_reference(&obj).map_err(err)?;
    let dim = obj.dim();
    let mut expected = vec![0.0; dim];
    for node in 0..obj.num_nodes() {
        let m = obj.components(node) as f64;
        for t in 0..obj.components(node) {
            // centers are recoverable: grad of component t at 0 is -center
            let g = obj.component_gradient(node, t, &vec![0.0; dim]).map_err(err)?;
            for (e, gi) in expected.iter_mut().zip(&g) {
                *e -= gi / m;
            }
        }
    }
    expected
        .iter_mut()
        .for_each(|e| *e /= obj.num_nodes() as f64);
    if max_abs_diff(&reference.x_star, &expected) > 1e-12 {
        return Err("quadratic minimizer is not the mean of the node means".into());
    }
    if reference.grad_norm > 1e-12 {
        return Err(format!("quadratic grad norm {:e}", reference.grad_norm));
    }

    let obj = small_logistic()?;
    let reference = engine::solve_reference(&obj).map_err(err)?;
    if reference.grad_norm > 1e-9 {
        return Err(format!("logistic grad norm {:e}", reference.grad_norm));
    }
    let at_zero = obj.global_value(&vec![0.0; obj.dim()]).map_err(err)?;
    if reference.f_star > at_zero {
        return Err("logistic f_star exceeds the value at the origin".into());
    }
    Ok(())
}

/// Identical traces on repeat runs and across worker pool sizes.
fn suite_determinism(_: &VerifyArgs) -> std::result::Result<(), String> {
    let csv_of = |jobs: usize| -> std::result::Result<Vec<u8>, String> {
        let mut cfg = tracking_config(Method::GtSaga);
        cfg.run.jobs = jobs;
        let out = engine::run(&cfg).map_err(err)?;
        let mut bytes = Vec::new();
        out.trace.write_csv(&mut bytes).map_err(err)?;
        Ok(bytes)
    };
    let first = csv_of(1)?;
    if first != csv_of(1)? {
        return Err("repeat run changed the trace".into());
    }
    if first != csv_of(2)? {
        return Err("worker count changed the trace".into());
    }
    Ok(())
}
