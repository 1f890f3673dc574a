//! Cross-checks against independent reference implementations: a dense SVD
//! for spectral gaps, central finite differences for every gradient path,
//! and exhaustive enumeration for estimator means and variances.

use gtvr_core::algos::{SagaTable, SvrgSnapshot};
use gtvr_core::dataio::synth_logistic;
use gtvr_core::graph::{
    build_complete, build_exponential, build_geometric, build_ring, metropolis_weights,
    uniform_weights, MixingMatrix, Topology,
};
use gtvr_core::objective::Objective;
use gtvr_core::rng::Stream;

fn gaussian_vec(seed: u64, tag: u64, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    Stream::new(seed, &[tag]).fill_gaussian(&mut v);
    v
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// spectral gap vs dense SVD

/// sigma is the largest singular value of W with the consensus direction
/// projected out; a dense SVD of W - (1/n) 1 1^T computes it directly.
fn svd_sigma(w: &MixingMatrix) -> f64 {
    let n = w.n();
    let rows = w.weights();
    let deflated = nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j] - 1.0 / n as f64);
    deflated
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

#[test]
fn power_iteration_sigma_matches_a_dense_svd() {
    let mut cases: Vec<(String, MixingMatrix)> = Vec::new();
    for n in [2usize, 3, 5, 10, 23, 50] {
        let t = build_ring(n).unwrap();
        cases.push((format!("ring {n} uniform"), uniform_weights(&t).unwrap()));
    }
    for n in [4usize, 8, 16, 32] {
        let t = build_exponential(n).unwrap();
        cases.push((
            format!("exponential {n} uniform"),
            uniform_weights(&t).unwrap(),
        ));
    }
    for n in [3usize, 10, 50] {
        let t = build_complete(n).unwrap();
        cases.push((format!("complete {n} uniform"), uniform_weights(&t).unwrap()));
        cases.push((
            format!("complete {n} metropolis"),
            metropolis_weights(&t).unwrap(),
        ));
    }
    for (n, radius, seed) in [(12usize, 0.6, 4u64), (30, 0.45, 9)] {
        let t = build_geometric(n, radius, seed).unwrap();
        cases.push((
            format!("geometric {n} metropolis"),
            metropolis_weights(&t).unwrap(),
        ));
    }
    // a lopsided symmetric custom graph exercises unequal degrees
    let edges = [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (0, 3), (3, 0), (1, 3), (3, 1)];
    let t = Topology::custom(4, edges).unwrap();
    cases.push(("custom 4 metropolis".into(), metropolis_weights(&t).unwrap()));

    for (label, w) in &cases {
        let reference = svd_sigma(w);
        assert!(
            (w.sigma() - reference).abs() <= 1e-8,
            "{label}: power iteration {} vs svd {reference}",
            w.sigma()
        );
    }
}

// ---------------------------------------------------------------------------
// gradients vs central finite differences

/// Central difference of a scalar function along every coordinate.
fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for d in 0..x.len() {
        probe[d] = x[d] + h;
        let up = f(&probe);
        probe[d] = x[d] - h;
        let down = f(&probe);
        probe[d] = x[d];
        grad[d] = (up - down) / (2.0 * h);
    }
    grad
}

fn assert_close(analytic: &[f64], numeric: &[f64], rel: f64, label: &str) {
    let scale = norm(analytic).max(1.0);
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(
        diff <= rel * scale,
        "{label}: gradient differs from finite differences by {diff:e} (scale {scale:e})"
    );
}

#[test]
fn component_gradients_match_central_differences() {
    let dim = 6;
    let logistic = Objective::logistic(
        vec![
            synth_logistic(12, dim, 31, 1.0).unwrap(),
            synth_logistic(9, dim, 32, 2.0).unwrap(),
        ],
        0.07,
    )
    .unwrap();
    let quad_centers: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|i| (0..5).map(|j| gaussian_vec(40, (i * 10 + j) as u64, dim)).collect())
        .collect();
    let quadratic = Objective::quadratic(quad_centers).unwrap();

    let mut probes = 0;
    for (obj, name, reps) in [(&logistic, "logistic", 3), (&quadratic, "quadratic", 4)] {
        let mut counter = 0u64;
        for node in 0..obj.num_nodes() {
            for j in 0..obj.components(node) {
                for rep in 0..reps {
                    let x = gaussian_vec(90 + rep, counter, dim);
                    counter += 1;
                    let analytic = obj.component_gradient(node, j, &x).unwrap();
                    let numeric = fd_gradient(
                        |p| obj.component_value(node, j, p).unwrap(),
                        &x,
                        1e-6,
                    );
                    assert_close(&analytic, &numeric, 1e-5, &format!("{name} ({node},{j})"));
                    probes += 1;
                }
            }
        }
    }
    assert!(probes >= 100, "only {probes} probes ran");
}

#[test]
fn batch_and_global_gradients_match_central_differences() {
    let dim = 4;
    let obj = Objective::logistic(
        vec![
            synth_logistic(8, dim, 51, 1.5).unwrap(),
            synth_logistic(11, dim, 52, 0.5).unwrap(),
            synth_logistic(6, dim, 53, 2.5).unwrap(),
        ],
        0.02,
    )
    .unwrap();
    for rep in 0..10 {
        let x = gaussian_vec(77, rep, dim);
        for node in 0..obj.num_nodes() {
            let analytic = obj.batch_gradient(node, &x).unwrap();
            let numeric = fd_gradient(|p| obj.batch_value(node, p).unwrap(), &x, 1e-6);
            assert_close(&analytic, &numeric, 1e-5, &format!("batch node {node}"));
        }
        let analytic = obj.global_gradient(&x).unwrap();
        let numeric = fd_gradient(|p| obj.global_value(p).unwrap(), &x, 1e-6);
        assert_close(&analytic, &numeric, 1e-5, "global");
    }
}

// ---------------------------------------------------------------------------
// estimator variance vanishes as state approaches the anchor

/// Empirical variance of the estimator over all component indices at query
/// point x, with table/snapshot anchored at distance delta from x.
fn estimator_variances(obj: &Objective, node: usize, x: &[f64], delta: f64) -> (f64, f64) {
    let m = obj.components(node);
    let dim = obj.dim();
    let direction = gaussian_vec(123, 0, dim);
    let scale = delta / norm(&direction);
    let anchor: Vec<f64> = x.iter().zip(&direction).map(|(xi, d)| xi + d * scale).collect();

    let table = SagaTable::from_points(obj, node, &vec![anchor.clone(); m]).unwrap();
    let snapshot = SvrgSnapshot::new(obj, node, &anchor).unwrap();

    let variance = |estimates: &[Vec<f64>]| -> f64 {
        let mut mean = vec![0.0; dim];
        for e in estimates {
            for (m_d, v) in mean.iter_mut().zip(e) {
                *m_d += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= estimates.len() as f64);
        estimates
            .iter()
            .map(|e| {
                e.iter()
                    .zip(&mean)
                    .map(|(v, m_d)| (v - m_d) * (v - m_d))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / estimates.len() as f64
    };

    let saga: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let g = obj.component_gradient(node, j, x).unwrap();
            table.estimate(j, &g)
        })
        .collect();
    let svrg: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let g = obj.component_gradient(node, j, x).unwrap();
            snapshot.estimate(obj, node, j, &g).unwrap()
        })
        .collect();
    (variance(&saga), variance(&svrg))
}

#[test]
fn estimator_variance_vanishes_quadratically_near_the_anchor() {
    let dim = 5;
    let obj =
        Objective::logistic(vec![synth_logistic(15, dim, 61, 1.0).unwrap()], 0.05).unwrap();
    let x = gaussian_vec(62, 7, dim);

    // anchored at x every estimate collapses to the same vector; the only
    // residual is rounding inside the variance accumulator itself
    let (saga_zero, svrg_zero) = estimator_variances(&obj, 0, &x, 0.0);
    assert!(saga_zero <= 1e-30, "saga variance at the anchor: {saga_zero:e}");
    assert!(svrg_zero <= 1e-30, "svrg variance at the anchor: {svrg_zero:e}");

    let mut last = None;
    for delta in [1e-1, 1e-2, 1e-3] {
        let (saga, svrg) = estimator_variances(&obj, 0, &x, delta);
        assert!(saga > 0.0 && svrg > 0.0, "off-anchor variance is positive");
        // unit-norm features give component gradients Lipschitz constant
        // near 1, so variance is bounded by a small multiple of delta^2
        for (v, name) in [(saga, "saga"), (svrg, "svrg")] {
            assert!(
                v <= 20.0 * delta * delta,
                "{name} variance {v:e} too large for delta {delta:e}"
            );
        }
        if let Some((prev_saga, prev_svrg)) = last {
            let expect = 1e-2; // delta shrinks 10x, variance should shrink ~100x
            assert!(saga <= prev_saga * expect * 5.0, "saga not quadratic");
            assert!(svrg <= prev_svrg * expect * 5.0, "svrg not quadratic");
        }
        last = Some((saga, svrg));
    }
}
