//! Experiment driver: configuration, reference solutions, metric traces.
//!
//! A run is fully described by a `RunConfig` (graph, objective, partition,
//! algorithm, run control).  The engine builds the network and the data,
//! resolves "auto" settings from the tuning theory, computes the reference
//! minimizer first so optimality gaps are exact, then drives synchronous
//! rounds and records metrics.  Identical configs produce byte-identical
//! trace CSVs at any worker count.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::algos::{self, Algorithm, Method, NodeState, Workspace};
use crate::dataio::{self, PartitionMode, Sample};
use crate::error::{Error, Result};
use crate::graph::{
    build_complete, build_exponential, build_geometric, build_ring, metropolis_weights,
    uniform_weights, MixingMatrix, NetworkDoc, Topology, TopologyKind,
};
use crate::objective::{Objective, SmoothnessConstants};
use crate::rng::Stream;
use crate::tuning::{self, TuningReport};

/// Reference solver: gradient-norm tolerance, relative to max(1, initial).
const REFERENCE_TOL: f64 = 1e-12;

/// Coordinates beyond this magnitude count as divergence even while still
/// finite: one more squaring would push the metrics outside f64 range, so
/// stopping here keeps the last-good diagnostic record finite.
const DIVERGENCE_LIMIT: f64 = 1e100;

// ---------------------------------------------------------------------------
// configuration

/// A numeric setting that can defer to the theory ("auto").
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Setting<T> {
    Value(T),
    Keyword(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

impl<T> Setting<T> {
    pub fn is_auto(&self) -> bool {
        matches!(self, Setting::Keyword(AutoKeyword::Auto))
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Setting::Value(v) => Some(v),
            Setting::Keyword(_) => None,
        }
    }
}

impl<T> Default for Setting<T> {
    fn default() -> Self {
        Setting::Keyword(AutoKeyword::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    #[default]
    Uniform,
    Metropolis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub kind: TopologyKind,
    pub n: usize,
    #[serde(default)]
    pub weight_rule: WeightRule,
    /// Placement seed for geometric graphs.
    #[serde(default)]
    pub seed: u64,
    /// Connection radius for geometric graphs.
    #[serde(default)]
    pub radius: Option<f64>,
    /// Directed (sender, receiver) pairs for custom graphs.
    #[serde(default)]
    pub edges: Option<Vec<(usize, usize)>>,
}

impl GraphConfig {
    pub fn build(&self) -> Result<(Topology, MixingMatrix)> {
        let topology = match self.kind {
            TopologyKind::Ring => build_ring(self.n)?,
            TopologyKind::Exponential => build_exponential(self.n)?,
            TopologyKind::Complete => build_complete(self.n)?,
            TopologyKind::Geometric => {
                let radius = self.radius.ok_or_else(|| {
                    Error::Config("graph.radius is required for geometric graphs".into())
                })?;
                build_geometric(self.n, radius, self.seed)?
            }
            TopologyKind::Custom => {
                let edges = self.edges.clone().ok_or_else(|| {
                    Error::Config("graph.edges is required for custom graphs".into())
                })?;
                Topology::custom(self.n, edges)?
            }
        };
        let mixing = match self.weight_rule {
            WeightRule::Uniform => uniform_weights(&topology)?,
            WeightRule::Metropolis => metropolis_weights(&topology)?,
        };
        Ok((topology, mixing))
    }
}

fn default_data_seed() -> u64 {
    1
}

fn default_separation() -> f64 {
    1.0
}

fn default_jitter() -> f64 {
    1.0
}

fn default_normalize() -> bool {
    true
}

/// What the nodes minimize.  `samples` always counts the whole dataset; the
/// partition section says how it is split across nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveConfig {
    /// Binary logistic regression with a ridge term.  Data comes from a
    /// LIBSVM-format file when `path` is set, otherwise from the synthetic
    /// generator.
    Logistic {
        lambda: f64,
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        test_path: Option<PathBuf>,
        /// Rescale file features to unit norm (the smoothness constants
        /// assume it).  Synthetic data is generated unit-norm already.
        #[serde(default = "default_normalize")]
        normalize: bool,
        /// Synthetic sample count (training).
        #[serde(default)]
        samples: Option<usize>,
        /// Synthetic feature dimension.
        #[serde(default)]
        dim: Option<usize>,
        /// Synthetic held-out samples for the accuracy column.
        #[serde(default)]
        test_samples: usize,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
        #[serde(default = "default_separation")]
        separation: f64,
    },
    /// Sum of squared distances to synthetic centers; has a closed-form
    /// minimizer, so it is the test objective.
    Quadratic {
        samples: usize,
        dim: usize,
        /// Center spread around each node's mean.
        #[serde(default = "default_jitter")]
        jitter: f64,
        /// Magnitude of the per-node mean shift; nonzero values make the
        /// nodes' local minimizers disagree.
        #[serde(default)]
        node_offset: f64,
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
}

impl ObjectiveConfig {
    pub fn lambda(&self) -> Option<f64> {
        match self {
            ObjectiveConfig::Logistic { lambda, .. } => Some(*lambda),
            ObjectiveConfig::Quadratic { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(default)]
    pub split: SplitKind,
    /// Relative node shares; required by (and only by) the proportional
    /// split.
    #[serde(default)]
    pub proportions: Option<Vec<f64>>,
    /// Fisher-Yates shuffle seed applied before splitting; None keeps file
    /// or generation order.
    #[serde(default)]
    pub shuffle: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    #[default]
    Even,
    Proportional,
}

impl PartitionConfig {
    fn to_mode(&self) -> Result<PartitionMode> {
        match (self.split, &self.proportions) {
            (SplitKind::Even, None) => Ok(PartitionMode::Even),
            (SplitKind::Even, Some(_)) => Err(Error::Config(
                "partition.proportions only applies to the proportional split".into(),
            )),
            (SplitKind::Proportional, Some(p)) => Ok(PartitionMode::Proportional(p.clone())),
            (SplitKind::Proportional, None) => Err(Error::Config(
                "the proportional split needs partition.proportions".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoConfig {
    pub method: Method,
    /// Step size; "auto" takes the theoretical value (variance-reduced
    /// methods only).
    #[serde(default)]
    pub alpha: Setting<f64>,
    /// Snapshot period; "auto" takes the theoretical value.
    #[serde(default)]
    pub svrg_period: Setting<u64>,
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Iteration budget.
    pub iters: u64,
    /// Stop once the recorded optimality gap reaches this value.
    #[serde(default)]
    pub target_gap: Option<f64>,
    pub seed: u64,
    /// Metric cadence: "auto" records every iteration up to 1000 and every
    /// tenth after; a number records every multiple of it.
    #[serde(default)]
    pub cadence: Setting<u64>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub graph: GraphConfig,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    pub algo: AlgoConfig,
    pub run: RunSection,
}

impl RunConfig {
    /// Structural checks that do not require building anything.
    pub fn validate(&self) -> Result<()> {
        if self.graph.n == 0 {
            return Err(Error::Config("graph.n must be at least 1".into()));
        }
        if self.run.iters == 0 {
            return Err(Error::Config("run.iters must be at least 1".into()));
        }
        if let Some(&c) = self.run.cadence.value() {
            if c == 0 {
                return Err(Error::Config("run.cadence must be at least 1".into()));
            }
        }
        if let Some(&a) = self.algo.alpha.value() {
            if !a.is_finite() || a <= 0.0 {
                return Err(Error::InvalidStepSize(a));
            }
        }
        if let Some(g) = self.run.target_gap {
            if !g.is_finite() || g <= 0.0 {
                return Err(Error::Config(format!(
                    "run.target_gap must be positive, got {g}"
                )));
            }
        }
        if let ObjectiveConfig::Logistic {
            lambda,
            path,
            test_path,
            samples,
            dim,
            ..
        } = &self.objective
        {
            if !lambda.is_finite() || *lambda <= 0.0 {
                return Err(Error::InvalidRegularization(*lambda));
            }
            if path.is_none() && (samples.is_none() || dim.is_none()) {
                return Err(Error::Config(
                    "objective needs a dataset path or synthetic samples + dim".into(),
                ));
            }
            if path.is_none() && test_path.is_some() {
                return Err(Error::Config(
                    "objective.test_path requires objective.path; synthetic data uses test_samples".into(),
                ));
            }
        }
        self.partition.to_mode()?;
        if !self.algo.method.variance_reduced() && self.algo.alpha.is_auto() {
            return Err(Error::Config(format!(
                "algo.alpha = \"auto\" is only defined for variance-reduced methods, not {}",
                self.algo.method
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// reference solution

/// The exact minimizer and the heterogeneity measure at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    /// Achieved global gradient norm at x_star.
    pub grad_norm: f64,
    /// zeta^2 = (1/n) sum_i ||grad f_i(x_star)||^2, the steady-state error
    /// driver for methods without tracking.
    pub zeta_sq: f64,
}

/// Computes x* before any stochastic run: closed form for quadratics, full
/// gradient descent with step 1/L to 1e-12 relative gradient norm otherwise.
pub fn solve_reference(obj: &Objective) -> Result<ReferenceSolution> {
    let x_star = if let Some(exact) = obj.closed_form_minimizer() {
        exact
    } else {
        let constants = obj.constants();
        let step = 1.0 / constants.l_smooth;
        let mut x = vec![0.0; obj.dim()];
        let grad0 = obj.global_gradient(&x)?;
        let tol = REFERENCE_TOL * norm(&grad0).max(1.0);
        // plain GD contracts the gradient by (1 - 1/Q) per iteration; the
        // budget leaves two orders of magnitude of headroom over that
        let budget = 10_000 + (3_000.0 * constants.q()) as u64;
        let mut iters = 0;
        loop {
            let grad = obj.global_gradient(&x)?;
            let gnorm = norm(&grad);
            if gnorm <= tol {
                break;
            }
            if iters >= budget {
                return Err(Error::ReferenceStall {
                    iters,
                    grad_norm: gnorm,
                    tol,
                });
            }
            for (xi, g) in x.iter_mut().zip(&grad) {
                *xi -= step * g;
            }
            iters += 1;
        }
        x
    };
    let grad_norm = norm(&obj.global_gradient(&x_star)?);
    let n = obj.num_nodes();
    let mut zeta_sq = 0.0;
    for i in 0..n {
        let gi = obj.batch_gradient(i, &x_star)?;
        zeta_sq += gi.iter().map(|g| g * g).sum::<f64>();
    }
    zeta_sq /= n as f64;
    Ok(ReferenceSolution {
        f_star: obj.global_value(&x_star)?,
        x_star,
        grad_norm,
        zeta_sq,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fraction of samples whose margin sign matches the label; a zero dot
/// product counts as a miss.
pub fn accuracy(x: &[f64], samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::UndefinedMetric("accuracy over an empty test set"));
    }
    let mut hits = 0usize;
    for s in samples {
        if s.features.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: s.features.len(),
                context: "accuracy",
            });
        }
        let dot: f64 = s.features.iter().zip(x).map(|(t, xi)| t * xi).sum();
        if dot * s.label > 0.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

// ---------------------------------------------------------------------------
// metrics

/// One sampled row of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: u64,
    /// Gradient evaluations over the node's own sample count, maximized
    /// over nodes.
    pub epoch: f64,
    /// (1/n) sum_i (F(x_i) - F(x*)).
    pub gap: f64,
    /// sum_i ||x_i - mean x||^2.
    pub consensus_err: f64,
    /// sum_i ||y_i - mean y||^2.
    pub tracking_err: f64,
    /// (1/n) sum_i ||x_i - x*||^2.
    pub msd: f64,
    /// Accuracy of the average iterate on the held-out set, when one exists.
    pub test_acc: Option<f64>,
    /// Cumulative per-node gradient evaluations (max over nodes).
    pub grad_evals: u64,
}

pub const TRACE_HEADER: &str = "iter,epoch,gap,consensus_err,tracking_err,msd,test_acc,grad_evals";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub records: Vec<MetricRecord>,
}

impl MetricsTrace {
    /// Fixed-schema CSV; floats print in shortest round-trip form so equal
    /// runs serialize to equal bytes.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for r in &self.records {
            let acc = r.test_acc.map(|a| a.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iter, r.epoch, r.gap, r.consensus_err, r.tracking_err, r.msd, acc, r.grad_evals
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or(Error::UndefinedMetric("empty trace file"))?;
        if header.trim_end() != TRACE_HEADER {
            return Err(Error::Config(format!("unexpected trace header: {header}")));
        }
        let mut records = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::Parse {
                    line: idx + 2,
                    cause: format!("expected 8 fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    line: idx + 2,
                    cause: format!("bad {what}: {s}"),
                })
            };
            records.push(MetricRecord {
                iter: fields[0].parse().map_err(|_| Error::Parse {
                    line: idx + 2,
                    cause: format!("bad iter: {}", fields[0]),
                })?,
                epoch: parse(fields[1], "epoch")?,
                gap: parse(fields[2], "gap")?,
                consensus_err: parse(fields[3], "consensus_err")?,
                tracking_err: parse(fields[4], "tracking_err")?,
                msd: parse(fields[5], "msd")?,
                test_acc: if fields[6].is_empty() {
                    None
                } else {
                    Some(parse(fields[6], "test_acc")?)
                },
                grad_evals: fields[7].parse().map_err(|_| Error::Parse {
                    line: idx + 2,
                    cause: format!("bad grad_evals: {}", fields[7]),
                })?,
            });
        }
        Ok(MetricsTrace { records })
    }

    /// Epoch of the first record at or below the gap threshold.
    pub fn epochs_to_gap(&self, threshold: f64) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.gap <= threshold)
            .map(|r| r.epoch)
    }

    pub fn final_record(&self) -> Option<&MetricRecord> {
        self.records.last()
    }
}

// ---------------------------------------------------------------------------
// the simulation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    /// Ran the whole iteration budget.
    BudgetExhausted,
    /// Hit the target gap early.
    ReachedTarget { iter: u64 },
    /// A non-finite coordinate appeared at this iteration; the trace ends
    /// with a diagnostic record of the previous (finite) iteration.
    Diverged { iter: u64 },
}

/// Everything needed to reproduce and interpret a run, serialized alongside
/// the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: RunConfig,
    pub resolved_alpha: f64,
    pub resolved_svrg_period: Option<u64>,
    pub sigma: f64,
    pub constants: SmoothnessConstants,
    pub tuning: Option<TuningReport>,
    pub network: NetworkDoc,
    pub reference: ReferenceSolution,
    pub build: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub trace: MetricsTrace,
    pub status: RunStatus,
    pub provenance: Provenance,
}

/// A configured experiment, stepped one synchronous round at a time.
pub struct Simulation {
    mixing: MixingMatrix,
    topology: Topology,
    objective: Objective,
    test_set: Option<Vec<Sample>>,
    algo: Algorithm,
    tuning: Option<TuningReport>,
    reference: ReferenceSolution,
    states: Vec<NodeState>,
    workspace: Workspace,
    pool: Option<rayon::ThreadPool>,
    seed: u64,
    iteration: u64,
}

impl Simulation {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let (topology, mixing) = cfg.graph.build()?;
        let (objective, test_set) = build_objective(cfg, topology.n())?;
        let constants = objective.constants();
        let sigma = mixing.sigma();
        let m_max = objective.m_max();
        let m_min = objective.m_min();

        let tuning = match cfg.algo.method {
            Method::GtSaga => Some(tuning::saga_tuning(constants, sigma, m_max, m_min)?),
            Method::GtSvrg => Some(tuning::svrg_tuning(constants, sigma)?),
            Method::GtDsgd | Method::Dsgd => None,
        };
        let alpha = match cfg.algo.alpha {
            Setting::Value(a) => a,
            Setting::Keyword(_) => {
                tuning
                    .as_ref()
                    .expect("validate() restricts auto alpha to tuned methods")
                    .alpha
            }
        };
        let svrg_period = match (cfg.algo.method, cfg.algo.svrg_period) {
            (Method::GtSvrg, Setting::Value(t)) => Some(t),
            (Method::GtSvrg, Setting::Keyword(_)) => {
                Some(tuning.as_ref().expect("svrg is tuned").svrg_t.unwrap())
            }
            (_, Setting::Value(_)) => {
                return Err(Error::Config(
                    "algo.svrg_period only applies to gt_svrg".into(),
                ))
            }
            (_, Setting::Keyword(_)) => None,
        };
        let algo = Algorithm::new(cfg.algo.method, alpha, svrg_period)?;

        let reference = solve_reference(&objective)?;
        let states = algos::init_states_shared(&algo, &objective, &vec![0.0; objective.dim()])?;
        let workspace = Workspace::new(topology.n(), objective.dim());
        let pool = if cfg.run.jobs > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.run.jobs)
                    .build()
                    .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Simulation {
            mixing,
            topology,
            objective,
            test_set,
            algo,
            tuning,
            reference,
            states,
            workspace,
            pool,
            seed: cfg.run.seed,
            iteration: 0,
        })
    }

    /// One synchronous round across all nodes.
    pub fn step(&mut self) -> Result<()> {
        let Simulation {
            mixing,
            objective,
            algo,
            states,
            workspace,
            pool,
            seed,
            iteration,
            ..
        } = self;
        match pool {
            Some(p) => p.install(|| {
                algos::step(
                    algo, mixing, objective, states, workspace, *iteration, *seed, true,
                )
            })?,
            None => algos::step(
                algo, mixing, objective, states, workspace, *iteration, *seed, false,
            )?,
        }
        self.iteration += 1;
        Ok(())
    }

    /// Whether the current state left the numerically meaningful range:
    /// non-finite coordinates, or magnitudes so large the metrics of the
    /// next round would overflow.
    pub fn diverged(&self) -> bool {
        !self
            .states
            .iter()
            .all(|s| within_limits(s.x()) && within_limits(s.y()))
    }

    /// Metrics of the current state.
    pub fn metrics(&self) -> Result<MetricRecord> {
        let xs: Vec<&[f64]> = self.states.iter().map(|s| s.x()).collect();
        let ys: Vec<&[f64]> = self.states.iter().map(|s| s.y()).collect();
        self.metrics_of(&xs, &ys, self.iteration)
    }

    /// Metrics of an explicit (x, y) snapshot; counters come from the
    /// current states.
    fn metrics_of(&self, xs: &[&[f64]], ys: &[&[f64]], iter: u64) -> Result<MetricRecord> {
        let n = self.topology.n();
        let dim = self.objective.dim();
        let inv_n = 1.0 / n as f64;

        let mut x_bar = vec![0.0; dim];
        let mut y_bar = vec![0.0; dim];
        for i in 0..n {
            for d in 0..dim {
                x_bar[d] += xs[i][d];
                y_bar[d] += ys[i][d];
            }
        }
        x_bar.iter_mut().for_each(|v| *v *= inv_n);
        y_bar.iter_mut().for_each(|v| *v *= inv_n);

        let mut gap = 0.0;
        let mut consensus = 0.0;
        let mut tracking = 0.0;
        let mut msd = 0.0;
        for i in 0..n {
            gap += self.objective.global_value(xs[i])? - self.reference.f_star;
            for d in 0..dim {
                let dx = xs[i][d] - x_bar[d];
                consensus += dx * dx;
                let dy = ys[i][d] - y_bar[d];
                tracking += dy * dy;
                let dstar = xs[i][d] - self.reference.x_star[d];
                msd += dstar * dstar;
            }
        }
        gap *= inv_n;
        msd *= inv_n;

        let test_acc = match &self.test_set {
            Some(t) => Some(accuracy(&x_bar, t)?),
            None => None,
        };
        let mut epoch = 0.0f64;
        let mut grad_evals = 0u64;
        for (i, s) in self.states.iter().enumerate() {
            let m = self.objective.components(i) as f64;
            epoch = epoch.max(s.grad_evals() as f64 / m);
            grad_evals = grad_evals.max(s.grad_evals());
        }
        Ok(MetricRecord {
            iter,
            epoch,
            gap,
            consensus_err: consensus,
            tracking_err: tracking,
            msd,
            test_acc,
            grad_evals,
        })
    }

    /// Diagnostic metrics of the round before the last step, used when the
    /// last step produced non-finite values.
    fn metrics_of_previous(&self) -> Result<MetricRecord> {
        let xs: Vec<&[f64]> = self.workspace.previous_x().iter().map(Vec::as_slice).collect();
        let ys: Vec<&[f64]> = self.workspace.previous_y().iter().map(Vec::as_slice).collect();
        self.metrics_of(&xs, &ys, self.iteration - 1)
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn reference(&self) -> &ReferenceSolution {
        &self.reference
    }

    pub fn mixing(&self) -> &MixingMatrix {
        &self.mixing
    }

    pub fn algorithm(&self) -> &Algorithm {
        &self.algo
    }

    pub fn tuning(&self) -> Option<&TuningReport> {
        self.tuning.as_ref()
    }

    pub fn provenance(&self, cfg: &RunConfig) -> Provenance {
        Provenance {
            config: cfg.clone(),
            resolved_alpha: self.algo.alpha(),
            resolved_svrg_period: self.algo.svrg_period(),
            sigma: self.mixing.sigma(),
            constants: self.objective.constants(),
            tuning: self.tuning.clone(),
            network: NetworkDoc::new(&self.topology, &self.mixing),
            reference: self.reference.clone(),
            build: build_descriptor(),
        }
    }
}

fn within_limits(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && x.abs() <= DIVERGENCE_LIMIT)
}

/// Whether iteration k is recorded under the given cadence setting.  The
/// auto rule records densely early (every iteration through 1000) and every
/// tenth iteration after.
fn on_cadence(cadence: &Setting<u64>, k: u64) -> bool {
    match cadence {
        Setting::Keyword(_) => k <= 1000 || k.is_multiple_of(10),
        Setting::Value(c) => k.is_multiple_of(*c),
    }
}

/// Executes a full run: record at iteration 0, step through the budget
/// recording on cadence, always emit the final record, stop early on target
/// gap or divergence.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let mut sim = Simulation::from_config(cfg)?;
    let provenance = sim.provenance(cfg);
    let mut trace = MetricsTrace::default();
    let mut status = RunStatus::BudgetExhausted;

    let mut record = sim.metrics()?;
    let target_hit = |r: &MetricRecord| cfg.run.target_gap.is_some_and(|t| r.gap <= t);
    if target_hit(&record) {
        status = RunStatus::ReachedTarget { iter: 0 };
    }
    trace.records.push(record);

    if !matches!(status, RunStatus::ReachedTarget { .. }) {
        for k in 1..=cfg.run.iters {
            sim.step()?;
            if sim.diverged() {
                status = RunStatus::Diverged { iter: k };
                if trace.records.last().map(|r| r.iter) != Some(k - 1) {
                    trace.records.push(sim.metrics_of_previous()?);
                }
                break;
            }
            let last = k == cfg.run.iters;
            if on_cadence(&cfg.run.cadence, k) || last {
                record = sim.metrics()?;
                let hit = target_hit(&record);
                trace.records.push(record);
                if hit {
                    status = RunStatus::ReachedTarget { iter: k };
                    break;
                }
            }
        }
    }
    Ok(RunOutput {
        trace,
        status,
        provenance,
    })
}

/// Best-effort version stamp for provenance.
pub fn build_descriptor() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

// ---------------------------------------------------------------------------
// data construction

fn build_objective(cfg: &RunConfig, n: usize) -> Result<(Objective, Option<Vec<Sample>>)> {
    match &cfg.objective {
        ObjectiveConfig::Logistic {
            lambda,
            path,
            test_path,
            normalize,
            samples,
            dim,
            test_samples,
            data_seed,
            separation,
        } => {
            let (mut train, mut test) = match path {
                Some(p) => {
                    let train = dataio::load_libsvm(p, None)?;
                    let dim = train.first().map_or(0, |s| s.features.len());
                    let test = match test_path {
                        Some(tp) => Some(dataio::load_libsvm(tp, Some(dim))?),
                        None => None,
                    };
                    (train, test)
                }
                None => {
                    let total = samples.expect("validated") + test_samples;
                    let mut all =
                        dataio::synth_logistic(total, dim.expect("validated"), *data_seed, *separation)?;
                    let test = if *test_samples > 0 {
                        Some(all.split_off(samples.expect("validated")))
                    } else {
                        None
                    };
                    (all, test)
                }
            };
            if *normalize {
                dataio::normalize_unit(&mut train)?;
                if let Some(t) = test.as_mut() {
                    dataio::normalize_unit(t)?;
                }
            }
            if let Some(shuffle_seed) = cfg.partition.shuffle {
                dataio::shuffle(&mut train, shuffle_seed);
            }
            let part = dataio::partition(train.len(), n, &cfg.partition.to_mode()?)?;
            let nodes = part.apply(&train);
            Ok((Objective::logistic(nodes, *lambda)?, test))
        }
        ObjectiveConfig::Quadratic {
            samples,
            dim,
            jitter,
            node_offset,
            data_seed,
        } => {
            let part = dataio::partition(*samples, n, &cfg.partition.to_mode()?)?;
            let mut nodes = Vec::with_capacity(n);
            for (i, range) in part.ranges().iter().enumerate() {
                let mut shift = vec![0.0; *dim];
                Stream::new(*data_seed, &[u64::from(b'o'), i as u64]).fill_gaussian(&mut shift);
                let mut centers = Vec::with_capacity(range.len());
                for t in range.clone() {
                    let mut c = vec![0.0; *dim];
                    Stream::new(*data_seed, &[u64::from(b'c'), t as u64]).fill_gaussian(&mut c);
                    for (ci, si) in c.iter_mut().zip(&shift) {
                        *ci = *ci * jitter + si * node_offset;
                    }
                    centers.push(c);
                }
                nodes.push(centers);
            }
            Ok((Objective::quadratic(nodes)?, None))
        }
    }
}

// ---------------------------------------------------------------------------
// speedup study

/// One row of the speedup table: per-node work of the decentralized run
/// against the single-node run on the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub n: usize,
    pub sigma: f64,
    pub target_gap: f64,
    pub centralized_evals: Option<u64>,
    pub decentralized_evals: Option<u64>,
    /// centralized / decentralized per-node evaluations; None unless both
    /// runs reached the target.
    pub ratio: Option<f64>,
}

/// For each node count, runs the template's method decentralized over n
/// nodes and centralized on one node holding all the data, both to the
/// target gap, and reports the per-node gradient-evaluation ratio.
pub fn speedup_study(
    template: &RunConfig,
    node_counts: &[usize],
    target_gap: f64,
) -> Result<Vec<SpeedupRow>> {
    if !(target_gap.is_finite() && target_gap > 0.0) {
        return Err(Error::Config(format!(
            "speedup target gap must be positive, got {target_gap}"
        )));
    }
    let mut rows = Vec::with_capacity(node_counts.len());
    for &n in node_counts {
        let mut cfg = template.clone();
        cfg.graph.n = n;
        cfg.run.target_gap = Some(target_gap);
        check_big_data(&cfg)?;
        let sigma = cfg.graph.build()?.1.sigma();

        let mut central = cfg.clone();
        central.graph = GraphConfig {
            kind: TopologyKind::Complete,
            n: 1,
            weight_rule: WeightRule::Uniform,
            seed: 0,
            radius: None,
            edges: None,
        };

        let dec_out = run(&cfg)?;
        let cen_out = run(&central)?;
        let evals_at_target = |out: &RunOutput| match out.status {
            RunStatus::ReachedTarget { .. } => {
                out.trace.final_record().map(|r| r.grad_evals)
            }
            _ => None,
        };
        let dec = evals_at_target(&dec_out);
        let cen = evals_at_target(&cen_out);
        rows.push(SpeedupRow {
            n,
            sigma,
            target_gap,
            centralized_evals: cen,
            decentralized_evals: dec,
            ratio: match (cen, dec) {
                (Some(c), Some(d)) if d > 0 => Some(c as f64 / d as f64),
                _ => None,
            },
        });
    }
    Ok(rows)
}

/// The linear-speedup claim only holds when local sample counts dominate the
/// network/conditioning term; refuse configurations outside that regime.
fn check_big_data(cfg: &RunConfig) -> Result<()> {
    let sim_inputs = cfg.graph.build()?;
    let sigma = sim_inputs.1.sigma();
    let (objective, _) = build_objective(cfg, cfg.graph.n)?;
    let q = objective.constants().q();
    if !tuning::big_data_check(objective.m_max(), objective.m_min(), q, sigma) {
        return Err(Error::Config(format!(
            "speedup study outside the big-data regime: n = {}, m = {}, Q = {q}, sigma = {sigma}",
            cfg.graph.n,
            objective.m_min(),
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
