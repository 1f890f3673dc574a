//! Decentralized optimizer state machines.
//!
//! All four methods share one synchronous round structure: mix the iterates,
//! take a step, and (for the gradient-tracking family) mix the trackers and
//! fold in a fresh gradient estimate.  They differ only in the estimator:
//!
//! * `gt_saga`: a per-component gradient table; one evaluation per round;
//! * `gt_svrg`: a periodic full-batch snapshot; two evaluations per round
//!   plus a batch every `period` rounds;
//! * `gt_dsgd`: the plain stochastic gradient inside the tracking recursion;
//! * `dsgd`: the classic baseline, no tracker at all.
//!
//! Rounds are barrier-synchronous.  Mixing reads the previous round's state
//! through double buffers, and each node draws randomness from a stream
//! keyed by (seed, node, iteration), so trajectories are bitwise identical
//! no matter how many worker threads execute the round.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MixingMatrix;
use crate::objective::Objective;
use crate::rng::Stream;

/// Exact table resynchronization cadence, in slot writes per table, to stop
/// the O(1) running mean from accumulating float drift.
const TABLE_RESYNC_WRITES: u64 = 10;

// ---------------------------------------------------------------------------
// method selection

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GtSaga,
    GtSvrg,
    GtDsgd,
    Dsgd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GtSaga => "gt_saga",
            Method::GtSvrg => "gt_svrg",
            Method::GtDsgd => "gt_dsgd",
            Method::Dsgd => "dsgd",
        }
    }

    /// Whether the method maintains the gradient tracker y.
    pub fn uses_tracking(self) -> bool {
        !matches!(self, Method::Dsgd)
    }

    /// Whether the stochastic gradient is variance-reduced.
    pub fn variance_reduced(self) -> bool {
        matches!(self, Method::GtSaga | Method::GtSvrg)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully specified method: which estimator, the step size, and the
/// snapshot period where applicable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Algorithm {
    method: Method,
    alpha: f64,
    svrg_period: Option<u64>,
}

impl Algorithm {
    pub fn new(method: Method, alpha: f64, svrg_period: Option<u64>) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidStepSize(alpha));
        }
        match (method, svrg_period) {
            (Method::GtSvrg, Some(t)) if t >= 1 => {}
            (Method::GtSvrg, t) => {
                return Err(Error::InvalidSnapshotPeriod(t.unwrap_or(0) as usize))
            }
            (_, Some(_)) => {
                return Err(Error::StateMismatch(
                    "snapshot period given for a method without snapshots",
                ))
            }
            (_, None) => {}
        }
        Ok(Algorithm {
            method,
            alpha,
            svrg_period,
        })
    }

    pub fn gt_saga(alpha: f64) -> Result<Self> {
        Self::new(Method::GtSaga, alpha, None)
    }

    pub fn gt_svrg(alpha: f64, period: u64) -> Result<Self> {
        Self::new(Method::GtSvrg, alpha, Some(period))
    }

    pub fn gt_dsgd(alpha: f64) -> Result<Self> {
        Self::new(Method::GtDsgd, alpha, None)
    }

    pub fn dsgd(alpha: f64) -> Result<Self> {
        Self::new(Method::Dsgd, alpha, None)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn svrg_period(&self) -> Option<u64> {
        self.svrg_period
    }
}

// ---------------------------------------------------------------------------
// gradient estimators

/// Component-gradient table with an O(1) running mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SagaTable {
    grads: Vec<Vec<f64>>,
    avg: Vec<f64>,
    writes: u64,
}

impl SagaTable {
    /// Table with entry j evaluated at `points[j]`.  The mean is accumulated
    /// in ascending j order, matching the batch-gradient oracle bit for bit.
    pub fn from_points(obj: &Objective, node: usize, points: &[Vec<f64>]) -> Result<Self> {
        let m = obj.components(node);
        if points.len() != m {
            return Err(Error::StateMismatch("one table point per component"));
        }
        let dim = obj.dim();
        let mut grads = Vec::with_capacity(m);
        let mut avg = vec![0.0; dim];
        for (j, point) in points.iter().enumerate() {
            let g = obj.component_gradient(node, j, point)?;
            for (a, gi) in avg.iter_mut().zip(&g) {
                *a += gi;
            }
            grads.push(g);
        }
        let inv = 1.0 / m as f64;
        avg.iter_mut().for_each(|a| *a *= inv);
        Ok(SagaTable {
            grads,
            avg,
            writes: 0,
        })
    }

    /// All entries at the shared starting point.
    pub fn init(obj: &Objective, node: usize, x0: &[f64]) -> Result<Self> {
        Self::from_points(obj, node, &vec![x0.to_vec(); obj.components(node)])
    }

    /// The estimator value for component j whose fresh gradient is
    /// `grad_new`: grad_new - table[j] + table mean.  Pure; no slot update.
    pub fn estimate(&self, j: usize, grad_new: &[f64]) -> Vec<f64> {
        grad_new
            .iter()
            .zip(&self.grads[j])
            .zip(&self.avg)
            .map(|((g, old), a)| g - old + a)
            .collect()
    }

    /// Overwrite slot j with the fresh gradient and maintain the running
    /// mean, resynchronizing it exactly every `TABLE_RESYNC_WRITES * m`
    /// writes.
    pub fn absorb(&mut self, j: usize, grad_new: Vec<f64>) {
        let m = self.grads.len() as f64;
        for ((a, new), old) in self.avg.iter_mut().zip(&grad_new).zip(&self.grads[j]) {
            *a += (new - old) / m;
        }
        self.grads[j] = grad_new;
        self.writes += 1;
        if self.writes.is_multiple_of(TABLE_RESYNC_WRITES * self.grads.len() as u64) {
            self.avg = self.recomputed_average();
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn average(&self) -> &[f64] {
        &self.avg
    }

    pub fn entry(&self, j: usize) -> &[f64] {
        &self.grads[j]
    }

    pub fn writes(&self) -> u64 {
        self.writes
    }

    /// Exact mean of the stored gradients, for drift checks and resyncs.
    pub fn recomputed_average(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.avg.len()];
        for g in &self.grads {
            for (m, gi) in mean.iter_mut().zip(g) {
                *m += gi;
            }
        }
        let inv = 1.0 / self.grads.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }
}

/// Periodic full-gradient snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrgSnapshot {
    point: Vec<f64>,
    batch_grad: Vec<f64>,
}

impl SvrgSnapshot {
    pub fn new(obj: &Objective, node: usize, point: &[f64]) -> Result<Self> {
        Ok(SvrgSnapshot {
            point: point.to_vec(),
            batch_grad: obj.batch_gradient(node, point)?,
        })
    }

    /// Move the snapshot to `point`; costs a full batch evaluation.
    pub fn refresh(&mut self, obj: &Objective, node: usize, point: &[f64]) -> Result<()> {
        self.point.clear();
        self.point.extend_from_slice(point);
        obj.batch_gradient_into(node, point, &mut self.batch_grad)
    }

    /// The estimator value for component j whose fresh gradient is
    /// `grad_new`: grad_new - grad of j at the snapshot + snapshot batch
    /// gradient.  Pure.
    pub fn estimate(
        &self,
        obj: &Objective,
        node: usize,
        j: usize,
        grad_new: &[f64],
    ) -> Result<Vec<f64>> {
        let at_snapshot = obj.component_gradient(node, j, &self.point)?;
        Ok(grad_new
            .iter()
            .zip(&at_snapshot)
            .zip(&self.batch_grad)
            .map(|((g, s), b)| g - s + b)
            .collect())
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn batch_grad(&self) -> &[f64] {
        &self.batch_grad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Saga(SagaTable),
    Svrg(SvrgSnapshot),
    /// Plain stochastic gradients carry no state.
    Stateless,
}

// ---------------------------------------------------------------------------
// node state

/// Everything one node owns between rounds.  Serializable, so runs can be
/// checkpointed and resumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    x: Vec<f64>,
    y: Vec<f64>,
    r_prev: Vec<f64>,
    estimator: Estimator,
    grad_evals: u64,
}

impl NodeState {
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn r_prev(&self) -> &[f64] {
        &self.r_prev
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    /// Cumulative component-gradient evaluations, including initialization.
    pub fn grad_evals(&self) -> u64 {
        self.grad_evals
    }
}

/// Initial states with x = x0 and, for tracking methods, y = r_prev set to
/// the local batch gradient at x0.
pub fn init_states(algo: &Algorithm, obj: &Objective, x0: &[Vec<f64>]) -> Result<Vec<NodeState>> {
    let n = obj.num_nodes();
    let dim = obj.dim();
    if x0.len() != n {
        return Err(Error::StateMismatch("one starting point per node"));
    }
    for start in x0 {
        if start.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: start.len(),
                context: "starting point",
            });
        }
    }
    let mut states = Vec::with_capacity(n);
    for (i, start) in x0.iter().enumerate() {
        let m = obj.components(i) as u64;
        let state = match algo.method() {
            Method::GtSaga => {
                let table = SagaTable::init(obj, i, start)?;
                let y = table.average().to_vec();
                NodeState {
                    x: start.clone(),
                    r_prev: y.clone(),
                    y,
                    estimator: Estimator::Saga(table),
                    grad_evals: m,
                }
            }
            Method::GtSvrg => {
                let snapshot = SvrgSnapshot::new(obj, i, start)?;
                let y = snapshot.batch_grad().to_vec();
                NodeState {
                    x: start.clone(),
                    r_prev: y.clone(),
                    y,
                    estimator: Estimator::Svrg(snapshot),
                    grad_evals: m,
                }
            }
            Method::GtDsgd => {
                let y = obj.batch_gradient(i, start)?;
                NodeState {
                    x: start.clone(),
                    r_prev: y.clone(),
                    y,
                    estimator: Estimator::Stateless,
                    grad_evals: m,
                }
            }
            Method::Dsgd => NodeState {
                x: start.clone(),
                y: vec![0.0; dim],
                r_prev: vec![0.0; dim],
                estimator: Estimator::Stateless,
                grad_evals: 0,
            },
        };
        states.push(state);
    }
    Ok(states)
}

/// Shared starting point for every node.
pub fn init_states_shared(
    algo: &Algorithm,
    obj: &Objective,
    x0: &[f64],
) -> Result<Vec<NodeState>> {
    init_states(algo, obj, &vec![x0.to_vec(); obj.num_nodes()])
}

// ---------------------------------------------------------------------------
// mixing

/// Consensus step: output row i is the W-weighted sum of input rows over
/// node i's in-neighborhood.  Rows are summed in ascending sender order, so
/// the result is independent of scheduling.
pub fn mix(w: &MixingMatrix, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = w.n();
    if rows.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rows.len(),
            context: "mix rows",
        });
    }
    let dim = rows.first().map_or(0, Vec::len);
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
                context: "mix row width",
            });
        }
    }
    let mut out = vec![vec![0.0; dim]; n];
    for (i, row) in out.iter_mut().enumerate() {
        mix_row(w, rows, i, row);
    }
    Ok(out)
}

fn mix_row(w: &MixingMatrix, rows: &[Vec<f64>], i: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (sender, &weight) in w.row(i).iter().enumerate() {
        if weight != 0.0 {
            for (o, v) in out.iter_mut().zip(&rows[sender]) {
                *o += weight * v;
            }
        }
    }
}

/// Reusable double buffers for one round of mixing.
#[derive(Debug, Clone)]
pub struct Workspace {
    mixed_x: Vec<Vec<f64>>,
    mixed_y: Vec<Vec<f64>>,
    x_rows: Vec<Vec<f64>>,
    y_rows: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(n: usize, dim: usize) -> Self {
        Workspace {
            mixed_x: vec![vec![0.0; dim]; n],
            mixed_y: vec![vec![0.0; dim]; n],
            x_rows: vec![vec![0.0; dim]; n],
            y_rows: vec![vec![0.0; dim]; n],
        }
    }

    /// The iterates the most recent `step` call mixed from, i.e. the x of
    /// the round before it.  Lets callers report the last finite state when
    /// a step diverges.
    pub fn previous_x(&self) -> &[Vec<f64>] {
        &self.x_rows
    }

    /// The trackers of the round before the most recent `step` call.  For
    /// the trackerless baseline this buffer stays at its zero initialization,
    /// which is also that method's y.
    pub fn previous_y(&self) -> &[Vec<f64>] {
        &self.y_rows
    }
}

// ---------------------------------------------------------------------------
// the synchronous round

/// Uniform component draw for one (node, iteration) pair.  Every draw uses
/// a fresh stream keyed by the logical coordinates, never by execution
/// order, which is what makes runs reproducible under any thread count.
pub fn sample_index(seed: u64, node: usize, k: u64, m: usize) -> usize {
    Stream::new(seed, &[u64::from(b'i'), node as u64, k]).next_index(m)
}

/// Advance every node by one synchronous round.
///
/// Gradient-tracking methods: x <- Wx - alpha y, draw j, estimate r at the
/// new x, then y <- Wy + r - r_prev.  DSGD: x <- Wx - alpha grad_{i,j}(x)
/// with the gradient taken at the pre-mixing iterate and no tracker.
#[allow(clippy::too_many_arguments)]
pub fn step(
    algo: &Algorithm,
    w: &MixingMatrix,
    obj: &Objective,
    states: &mut [NodeState],
    work: &mut Workspace,
    k: u64,
    seed: u64,
    parallel: bool,
) -> Result<()> {
    let n = w.n();
    let dim = obj.dim();
    if states.len() != n || obj.num_nodes() != n {
        return Err(Error::StateMismatch("states, matrix, and objective sizes"));
    }
    if work.mixed_x.len() != n || work.mixed_x[0].len() != dim {
        return Err(Error::StateMismatch("workspace shape"));
    }

    // snapshot the previous round so mixing never observes a partial update
    for (buf, state) in work.x_rows.iter_mut().zip(states.iter()) {
        buf.copy_from_slice(&state.x);
    }
    let needs_y = algo.method().uses_tracking();
    if needs_y {
        for (buf, state) in work.y_rows.iter_mut().zip(states.iter()) {
            buf.copy_from_slice(&state.y);
        }
    }

    let Workspace {
        mixed_x,
        mixed_y,
        x_rows,
        y_rows,
    } = work;

    let mix_phase = |i: usize, out_x: &mut Vec<f64>, out_y: &mut Vec<f64>| {
        mix_row(w, x_rows, i, out_x);
        if needs_y {
            mix_row(w, y_rows, i, out_y);
        }
    };
    if parallel {
        mixed_x
            .par_iter_mut()
            .zip(mixed_y.par_iter_mut())
            .enumerate()
            .for_each(|(i, (ox, oy))| mix_phase(i, ox, oy));
    } else {
        for (i, (ox, oy)) in mixed_x.iter_mut().zip(mixed_y.iter_mut()).enumerate() {
            mix_phase(i, ox, oy);
        }
    }

    let update = |i: usize, state: &mut NodeState, mx: &[f64], my: &[f64]| -> Result<()> {
        update_node(algo, obj, i, state, mx, my, k, seed)
    };
    if parallel {
        states
            .par_iter_mut()
            .zip(mixed_x.par_iter().zip(mixed_y.par_iter()))
            .enumerate()
            .try_for_each(|(i, (state, (mx, my)))| update(i, state, mx, my))
    } else {
        states
            .iter_mut()
            .zip(mixed_x.iter().zip(mixed_y.iter()))
            .enumerate()
            .try_for_each(|(i, (state, (mx, my)))| update(i, state, mx, my))
    }
}

#[allow(clippy::too_many_arguments)]
fn update_node(
    algo: &Algorithm,
    obj: &Objective,
    i: usize,
    state: &mut NodeState,
    mixed_x: &[f64],
    mixed_y: &[f64],
    k: u64,
    seed: u64,
) -> Result<()> {
    let alpha = algo.alpha();
    let m = obj.components(i);
    let j = sample_index(seed, i, k, m);

    if algo.method() == Method::Dsgd {
        // gradient evaluated at the pre-mixing iterate
        let grad = obj.component_gradient(i, j, &state.x)?;
        for ((x, mx), g) in state.x.iter_mut().zip(mixed_x).zip(&grad) {
            *x = mx - alpha * g;
        }
        state.grad_evals += 1;
        return Ok(());
    }

    for ((x, mx), y) in state.x.iter_mut().zip(mixed_x).zip(&state.y) {
        *x = mx - alpha * y;
    }

    let grad_new = obj.component_gradient(i, j, &state.x)?;
    let r_new = match (algo.method(), &mut state.estimator) {
        (Method::GtSaga, Estimator::Saga(table)) => {
            let r = table.estimate(j, &grad_new);
            table.absorb(j, grad_new);
            state.grad_evals += 1;
            r
        }
        (Method::GtSvrg, Estimator::Svrg(snapshot)) => {
            let period = algo.svrg_period().expect("validated at construction");
            if (k + 1).is_multiple_of(period) {
                snapshot.refresh(obj, i, &state.x)?;
                state.grad_evals += m as u64;
            }
            let r = snapshot.estimate(obj, i, j, &grad_new)?;
            state.grad_evals += 2;
            r
        }
        (Method::GtDsgd, Estimator::Stateless) => {
            state.grad_evals += 1;
            grad_new
        }
        _ => return Err(Error::StateMismatch("estimator kind vs method")),
    };

    for (((y, my), r), rp) in state
        .y
        .iter_mut()
        .zip(mixed_y)
        .zip(&r_new)
        .zip(&state.r_prev)
    {
        *y = my + r - rp;
    }
    state.r_prev = r_new;
    Ok(())
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_complete, build_exponential, build_ring, uniform_weights};

    fn quad(nodes: Vec<Vec<Vec<f64>>>) -> Objective {
        Objective::quadratic(nodes).unwrap()
    }

    fn complete(n: usize) -> MixingMatrix {
        uniform_weights(&build_complete(n).unwrap()).unwrap()
    }

    fn single_node() -> MixingMatrix {
        complete(1)
    }

    fn run_rounds(
        algo: &Algorithm,
        w: &MixingMatrix,
        obj: &Objective,
        states: &mut [NodeState],
        rounds: u64,
        seed: u64,
    ) {
        let mut work = Workspace::new(w.n(), obj.dim());
        for k in 0..rounds {
            step(algo, w, obj, states, &mut work, k, seed, false).unwrap();
        }
    }

    // --- construction ------------------------------------------------------

    #[test]
    fn algorithm_validation() {
        assert!(Algorithm::gt_saga(0.1).is_ok());
        assert!(matches!(
            Algorithm::gt_saga(0.0),
            Err(Error::InvalidStepSize(_))
        ));
        assert!(Algorithm::gt_saga(f64::NAN).is_err());
        assert!(Algorithm::gt_saga(-0.3).is_err());
        assert!(matches!(
            Algorithm::gt_svrg(0.1, 0),
            Err(Error::InvalidSnapshotPeriod(0))
        ));
        assert!(Algorithm::gt_svrg(0.1, 1).is_ok());
        assert!(matches!(
            Algorithm::new(Method::Dsgd, 0.1, Some(5)),
            Err(Error::StateMismatch(_))
        ));
    }

    #[test]
    fn init_at_sole_minimizer_gives_zero_tracker() {
        let obj = quad(vec![vec![vec![2.0, -1.0]]]);
        let algo = Algorithm::gt_saga(0.1).unwrap();
        let states = init_states_shared(&algo, &obj, &[2.0, -1.0]).unwrap();
        assert_eq!(states[0].y(), &[0.0, 0.0]);
        assert_eq!(states[0].r_prev(), &[0.0, 0.0]);
        assert_eq!(states[0].grad_evals(), 1);
    }

    #[test]
    fn saga_table_average_equals_batch_gradient_at_init() {
        let nodes = vec![crate::dataio::synth_logistic(7, 3, 11, 1.0).unwrap()];
        let obj = Objective::logistic(nodes, 0.1).unwrap();
        let x0 = vec![0.2, -0.4, 0.6];
        let table = SagaTable::init(&obj, 0, &x0).unwrap();
        assert_eq!(table.average(), obj.batch_gradient(0, &x0).unwrap());
    }

    #[test]
    fn tracker_initializes_to_batch_gradients_for_all_tracking_methods() {
        let obj = quad(vec![
            vec![vec![1.0], vec![3.0]],
            vec![vec![-2.0], vec![0.0]],
        ]);
        let x0 = vec![0.5];
        for algo in [
            Algorithm::gt_saga(0.1).unwrap(),
            Algorithm::gt_svrg(0.1, 5).unwrap(),
            Algorithm::gt_dsgd(0.1).unwrap(),
        ] {
            let states = init_states_shared(&algo, &obj, &x0).unwrap();
            for (i, s) in states.iter().enumerate() {
                let batch = obj.batch_gradient(i, &x0).unwrap();
                assert_eq!(s.y(), batch.as_slice(), "{}", algo.method());
                assert_eq!(s.r_prev(), batch.as_slice());
            }
        }
        let dsgd_states =
            init_states_shared(&Algorithm::dsgd(0.1).unwrap(), &obj, &x0).unwrap();
        assert_eq!(dsgd_states[0].y(), &[0.0]);
        assert_eq!(dsgd_states[0].grad_evals(), 0);
    }

    #[test]
    fn init_rejects_shape_mismatches() {
        let obj = quad(vec![vec![vec![0.0]], vec![vec![1.0]]]);
        let algo = Algorithm::gt_saga(0.1).unwrap();
        assert!(init_states(&algo, &obj, &[vec![0.0]]).is_err());
        assert!(init_states(&algo, &obj, &[vec![0.0], vec![0.0, 1.0]]).is_err());
    }

    // --- sampling -----------------------------------------------------------

    #[test]
    fn single_component_always_draws_it() {
        for k in 0..20 {
            assert_eq!(sample_index(9, 3, k, 1), 0);
        }
    }

    #[test]
    fn draws_replay_and_differ_across_nodes_and_rounds() {
        assert_eq!(sample_index(7, 2, 5, 1000), sample_index(7, 2, 5, 1000));
        let same = (0..50)
            .filter(|&k| sample_index(7, 0, k, 1_000_000) == sample_index(7, 1, k, 1_000_000))
            .count();
        assert_eq!(same, 0, "distinct nodes should draw independently");
    }

    #[test]
    fn draws_are_uniform_by_chi_squared() {
        let m = 7;
        let draws = 100_000;
        let mut counts = vec![0u64; m];
        for k in 0..draws {
            counts[sample_index(123, 0, k, m)] += 1;
        }
        let expected = draws as f64 / m as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 99.9th percentile of chi-squared with 6 degrees of freedom
        assert!(chi2 < 22.46, "chi2 = {chi2}");
    }

    // --- estimators ---------------------------------------------------------

    #[test]
    fn saga_single_component_reduces_to_plain_gradient() {
        let obj = quad(vec![vec![vec![4.0]]]);
        let table = SagaTable::init(&obj, 0, &[0.0]).unwrap();
        let x_new = vec![1.0];
        let g = obj.component_gradient(0, 0, &x_new).unwrap();
        assert_eq!(table.estimate(0, &g), g);
    }

    #[test]
    fn saga_estimate_at_common_table_point_is_the_batch_gradient() {
        let obj = quad(vec![vec![vec![1.0], vec![5.0], vec![-3.0]]]);
        let x = vec![0.7];
        let table = SagaTable::init(&obj, 0, &x).unwrap();
        let batch = obj.batch_gradient(0, &x).unwrap();
        for j in 0..3 {
            let g = obj.component_gradient(0, j, &x).unwrap();
            let est = table.estimate(j, &g);
            for (e, b) in est.iter().zip(&batch) {
                assert!((e - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn saga_estimates_average_to_the_batch_gradient() {
        // frozen table at scattered points, probe point elsewhere
        let obj = quad(vec![vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0]]]);
        let points = vec![vec![0.1, 0.1], vec![-0.5, 0.3], vec![0.9, -0.2]];
        let table = SagaTable::from_points(&obj, 0, &points).unwrap();
        let x = vec![0.25, -0.75];
        let mut mean = [0.0; 2];
        for j in 0..3 {
            let g = obj.component_gradient(0, j, &x).unwrap();
            for (m, e) in mean.iter_mut().zip(table.estimate(j, &g)) {
                *m += e / 3.0;
            }
        }
        let batch = obj.batch_gradient(0, &x).unwrap();
        for (m, b) in mean.iter().zip(&batch) {
            assert!((m - b).abs() < 1e-13);
        }
    }

    #[test]
    fn saga_absorb_keeps_running_mean_consistent() {
        let obj = quad(vec![vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]]);
        let mut table = SagaTable::init(&obj, 0, &[0.0]).unwrap();
        let mut stream = crate::rng::Stream::new(4, &[0]);
        for t in 0..250 {
            let j = stream.next_index(4);
            let x = vec![stream.next_gaussian()];
            let g = obj.component_gradient(0, j, &x).unwrap();
            table.absorb(j, g);
            let exact = table.recomputed_average();
            let drift = (table.average()[0] - exact[0]).abs();
            assert!(
                drift <= 1e-10 * exact[0].abs().max(1.0),
                "drift {drift} after {t} writes"
            );
        }
        assert_eq!(table.writes(), 250);
    }

    #[test]
    fn saga_resync_makes_running_mean_exact_again() {
        let obj = quad(vec![vec![vec![10.0], vec![-10.0]]]);
        let mut table = SagaTable::init(&obj, 0, &[0.0]).unwrap();
        // resync cadence for m = 2 is every 20 writes
        for t in 0..20 {
            let g = obj.component_gradient(0, t % 2, &[t as f64]).unwrap();
            table.absorb(t % 2, g);
        }
        assert_eq!(table.average(), table.recomputed_average().as_slice());
    }

    #[test]
    fn svrg_estimate_at_snapshot_point_is_the_batch_gradient() {
        let obj = quad(vec![vec![vec![2.0], vec![-2.0], vec![6.0]]]);
        let tau = vec![1.5];
        let snapshot = SvrgSnapshot::new(&obj, 0, &tau).unwrap();
        for j in 0..3 {
            let g = obj.component_gradient(0, j, &tau).unwrap();
            let v = snapshot.estimate(&obj, 0, j, &g).unwrap();
            assert_eq!(v, snapshot.batch_grad().to_vec());
        }
    }

    #[test]
    fn svrg_single_component_reduces_to_plain_gradient() {
        let obj = quad(vec![vec![vec![3.0]]]);
        let snapshot = SvrgSnapshot::new(&obj, 0, &[0.0]).unwrap();
        let g = obj.component_gradient(0, 0, &[2.0]).unwrap();
        assert_eq!(snapshot.estimate(&obj, 0, 0, &g).unwrap(), g);
    }

    #[test]
    fn svrg_estimates_average_to_the_batch_gradient() {
        let obj = quad(vec![vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![2.0, 2.0]]]);
        let snapshot = SvrgSnapshot::new(&obj, 0, &[0.4, -0.1]).unwrap();
        let x = vec![-1.0, 0.8];
        let mut mean = [0.0; 2];
        for j in 0..3 {
            let g = obj.component_gradient(0, j, &x).unwrap();
            let v = snapshot.estimate(&obj, 0, j, &g).unwrap();
            for (m, vi) in mean.iter_mut().zip(&v) {
                *m += vi / 3.0;
            }
        }
        let batch = obj.batch_gradient(0, &x).unwrap();
        for (m, b) in mean.iter().zip(&batch) {
            assert!((m - b).abs() < 1e-13);
        }
    }

    // --- mixing ---------------------------------------------------------------

    #[test]
    fn identity_matrix_mixes_to_itself() {
        let w = uniform_weights(&build_ring(1).unwrap()).unwrap();
        let rows = vec![vec![1.0, 2.0]];
        assert_eq!(mix(&w, &rows).unwrap(), rows);
    }

    #[test]
    fn complete_graph_mixes_to_the_mean_row() {
        let w = complete(4);
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, -(i as f64)]).collect();
        let mixed = mix(&w, &rows).unwrap();
        for row in &mixed {
            assert!((row[0] - 1.5).abs() < 1e-15);
            assert!((row[1] + 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn mixing_preserves_the_mean_row() {
        let topo = build_exponential(6).unwrap();
        let w = uniform_weights(&topo).unwrap();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![(i * i) as f64, 1.0 / (i + 1) as f64])
            .collect();
        let mixed = mix(&w, &rows).unwrap();
        for d in 0..2 {
            let before: f64 = rows.iter().map(|r| r[d]).sum::<f64>() / 6.0;
            let after: f64 = mixed.iter().map(|r| r[d]).sum::<f64>() / 6.0;
            assert!((before - after).abs() < 1e-13);
        }
    }

    #[test]
    fn mix_rejects_wrong_row_count() {
        let w = complete(3);
        assert!(mix(&w, &[vec![0.0]]).is_err());
    }

    // --- steps ---------------------------------------------------------------

    #[test]
    fn single_node_dsgd_is_centralized_sgd() {
        let obj = quad(vec![vec![vec![1.0], vec![3.0]]]);
        let algo = Algorithm::dsgd(0.25).unwrap();
        let w = single_node();
        let mut states = init_states_shared(&algo, &obj, &[0.0]).unwrap();
        let mut expected = 0.0f64;
        let mut work = Workspace::new(1, 1);
        for k in 0..40 {
            let j = sample_index(5, 0, k, 2);
            let center = [1.0, 3.0][j];
            expected -= 0.25 * (expected - center);
            step(&algo, &w, &obj, &mut states, &mut work, k, 5, false).unwrap();
            assert_eq!(states[0].x()[0], expected, "round {k}");
        }
        assert_eq!(states[0].grad_evals(), 40);
    }

    #[test]
    fn single_node_single_component_saga_is_exact_gradient_descent() {
        // the estimator collapses to the true gradient, so the distance to
        // the minimizer contracts by exactly (1 - alpha mu) each round
        let center = 2.5;
        let obj = quad(vec![vec![vec![center]]]);
        let alpha = 0.1;
        let algo = Algorithm::gt_saga(alpha).unwrap();
        let w = single_node();
        let mut states = init_states_shared(&algo, &obj, &[0.0]).unwrap();
        run_rounds(&algo, &w, &obj, &mut states, 50, 2);
        let expected = center - center * (1.0 - alpha).powi(50);
        assert!(
            (states[0].x()[0] - expected).abs() < 1e-12,
            "{} vs {expected}",
            states[0].x()[0]
        );
    }

    #[test]
    fn dsgd_evaluates_at_the_pre_mixing_iterate() {
        // two nodes, one quadratic component each; after one round
        // x_0 = mean(x) - alpha (x_0 - c_0), which differs from the
        // post-mixing gradient variant mean(x) - alpha (mean(x) - c_0)
        let obj = quad(vec![vec![vec![0.0]], vec![vec![10.0]]]);
        let algo = Algorithm::dsgd(0.5).unwrap();
        let w = complete(2);
        let mut states = init_states(&algo, &obj, &[vec![2.0], vec![6.0]]).unwrap();
        let mut work = Workspace::new(2, 1);
        step(&algo, &w, &obj, &mut states, &mut work, 0, 1, false).unwrap();
        assert_eq!(states[0].x()[0], 4.0 - 0.5 * 2.0);
        assert_eq!(states[1].x()[0], 4.0 - 0.5 * (6.0 - 10.0));
    }

    #[test]
    fn tracking_identity_holds_after_every_round() {
        let obj = quad(vec![
            vec![vec![1.0, 0.0], vec![2.0, 1.0]],
            vec![vec![-1.0, 3.0], vec![0.0, 0.0], vec![4.0, 4.0]],
            vec![vec![2.0, -2.0]],
        ]);
        let topo = build_ring(3).unwrap();
        let w = uniform_weights(&topo).unwrap();
        for algo in [
            Algorithm::gt_saga(0.05).unwrap(),
            Algorithm::gt_svrg(0.05, 4).unwrap(),
            Algorithm::gt_dsgd(0.05).unwrap(),
        ] {
            let mut states = init_states_shared(&algo, &obj, &[0.0, 0.0]).unwrap();
            let mut work = Workspace::new(3, 2);
            for k in 0..30 {
                step(&algo, &w, &obj, &mut states, &mut work, k, 9, false).unwrap();
                for d in 0..2 {
                    let mean_y: f64 = states.iter().map(|s| s.y()[d]).sum::<f64>() / 3.0;
                    let mean_r: f64 =
                        states.iter().map(|s| s.r_prev()[d]).sum::<f64>() / 3.0;
                    assert!(
                        (mean_y - mean_r).abs() < 1e-11,
                        "{} round {k} coord {d}: {mean_y} vs {mean_r}",
                        algo.method()
                    );
                }
            }
        }
    }

    #[test]
    fn svrg_snapshot_refreshes_at_period_boundaries_only() {
        let obj = quad(vec![vec![vec![1.0], vec![2.0], vec![3.0]]]);
        let algo = Algorithm::gt_svrg(0.1, 4).unwrap();
        let w = single_node();
        let mut states = init_states_shared(&algo, &obj, &[0.0]).unwrap();
        let mut work = Workspace::new(1, 1);
        let tau0 = match states[0].estimator() {
            Estimator::Svrg(s) => s.point().to_vec(),
            _ => unreachable!(),
        };
        for k in 0..8u64 {
            step(&algo, &w, &obj, &mut states, &mut work, k, 3, false).unwrap();
            let tau = match states[0].estimator() {
                Estimator::Svrg(s) => s.point().to_vec(),
                _ => unreachable!(),
            };
            if k < 3 {
                assert_eq!(tau, tau0, "round {k} must keep the initial snapshot");
            }
            if k == 3 {
                assert_eq!(tau, states[0].x(), "refresh lands on the new iterate");
            }
        }
    }

    #[test]
    fn gradient_evaluation_counts_follow_the_method_arithmetic() {
        let obj = quad(vec![vec![vec![1.0]; 5], vec![vec![2.0]; 5]]);
        let w = complete(2);
        let rounds = 23u64;
        let period = 4u64;
        let m = 5u64;
        let cases = [
            (Algorithm::gt_saga(0.1).unwrap(), m + rounds),
            (
                Algorithm::gt_svrg(0.1, period).unwrap(),
                m + 2 * rounds + m * (rounds / period),
            ),
            (Algorithm::gt_dsgd(0.1).unwrap(), m + rounds),
            (Algorithm::dsgd(0.1).unwrap(), rounds),
        ];
        for (algo, expected) in cases {
            let mut states = init_states_shared(&algo, &obj, &[0.0]).unwrap();
            run_rounds(&algo, &w, &obj, &mut states, rounds, 6);
            for s in &states {
                assert_eq!(s.grad_evals(), expected, "{}", algo.method());
            }
        }
    }

    #[test]
    fn parallel_and_serial_rounds_are_bitwise_identical() {
        let nodes: Vec<Vec<crate::dataio::Sample>> = (0..4)
            .map(|i| crate::dataio::synth_logistic(6, 3, 40 + i, 1.0).unwrap())
            .collect();
        let obj = Objective::logistic(nodes, 0.05).unwrap();
        let topo = build_exponential(4).unwrap();
        let w = uniform_weights(&topo).unwrap();
        let algo = Algorithm::gt_saga(0.02).unwrap();
        let mut serial = init_states_shared(&algo, &obj, &[0.0; 3]).unwrap();
        let mut parallel = serial.clone();
        let mut work_s = Workspace::new(4, 3);
        let mut work_p = Workspace::new(4, 3);
        for k in 0..25 {
            step(&algo, &w, &obj, &mut serial, &mut work_s, k, 8, false).unwrap();
            step(&algo, &w, &obj, &mut parallel, &mut work_p, k, 8, true).unwrap();
        }
        assert_eq!(serial, parallel);
    }

    #[test]
    fn gt_methods_reach_consensus_on_the_quadratic_minimizer() {
        let obj = quad(vec![
            vec![vec![1.0], vec![2.0]],
            vec![vec![3.0], vec![4.0]],
            vec![vec![-1.0], vec![5.0]],
            vec![vec![0.0], vec![2.0]],
        ]);
        let x_star = obj.closed_form_minimizer().unwrap();
        let topo = build_ring(4).unwrap();
        let w = uniform_weights(&topo).unwrap();
        for algo in [
            Algorithm::gt_saga(0.05).unwrap(),
            Algorithm::gt_svrg(0.05, 10).unwrap(),
        ] {
            let mut states = init_states_shared(&algo, &obj, &[10.0]).unwrap();
            run_rounds(&algo, &w, &obj, &mut states, 3000, 10);
            for s in &states {
                assert!(
                    (s.x()[0] - x_star[0]).abs() < 1e-9,
                    "{}: {} vs {}",
                    algo.method(),
                    s.x()[0],
                    x_star[0]
                );
            }
        }
    }

    #[test]
    fn state_method_mismatch_is_detected() {
        let obj = quad(vec![vec![vec![1.0]]]);
        let saga = Algorithm::gt_saga(0.1).unwrap();
        let svrg = Algorithm::gt_svrg(0.1, 2).unwrap();
        let mut states = init_states_shared(&saga, &obj, &[0.0]).unwrap();
        let mut work = Workspace::new(1, 1);
        let w = single_node();
        assert!(matches!(
            step(&svrg, &w, &obj, &mut states, &mut work, 0, 0, false),
            Err(Error::StateMismatch(_))
        ));
    }

    #[test]
    fn node_state_round_trips_through_json() {
        let obj = quad(vec![vec![vec![1.0, -1.0], vec![2.0, 0.5]]]);
        let algo = Algorithm::gt_saga(0.07).unwrap();
        let mut states = init_states_shared(&algo, &obj, &[0.3, 0.3]).unwrap();
        run_rounds(&algo, &single_node(), &obj, &mut states, 7, 12);
        let json = serde_json::to_string(&states).unwrap();
        let back: Vec<NodeState> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, states);
    }

    #[test]
    fn resumed_run_continues_identically() {
        let obj = quad(vec![vec![vec![1.0]], vec![vec![-1.0]]]);
        let algo = Algorithm::gt_saga(0.1).unwrap();
        let w = complete(2);
        let mut full = init_states_shared(&algo, &obj, &[5.0]).unwrap();
        let mut work = Workspace::new(2, 1);
        for k in 0..10 {
            step(&algo, &w, &obj, &mut full, &mut work, k, 77, false).unwrap();
        }
        let mut resumed = init_states_shared(&algo, &obj, &[5.0]).unwrap();
        for k in 0..5 {
            step(&algo, &w, &obj, &mut resumed, &mut work, k, 77, false).unwrap();
        }
        let json = serde_json::to_string(&resumed).unwrap();
        let mut resumed: Vec<NodeState> = serde_json::from_str(&json).unwrap();
        for k in 5..10 {
            step(&algo, &w, &obj, &mut resumed, &mut work, k, 77, false).unwrap();
        }
        assert_eq!(full, resumed);
    }
}
