//! Error taxonomy for the whole crate.
//!
//! Variants are grouped by the layer that raises them.  The CLI maps these to
//! process exit codes, so the grouping is part of the public contract:
//! configuration and input problems are distinct from numerical failures.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // --- graph construction -------------------------------------------------
    #[error("graph must have at least one node")]
    EmptyGraph,

    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),

    #[error("topology is not strongly connected")]
    NotStronglyConnected,

    #[error("geometric graph stayed disconnected after {attempts} attempts (last seed {last_seed})")]
    GeometricDisconnected { attempts: usize, last_seed: u64 },

    #[error("geometric radius must be a finite positive number, got {0}")]
    InvalidRadius(f64),

    #[error("node {node} has in-degree {in_degree} but out-degree {out_degree}; uniform weights need balanced degrees")]
    DegreeMismatch {
        node: usize,
        in_degree: usize,
        out_degree: usize,
    },

    #[error("edge ({0}, {1}) has no reverse edge; Metropolis weights need a symmetric topology")]
    AsymmetricTopology(usize, usize),

    #[error("weight matrix is not doubly stochastic: {axis} {index} sums to {sum}")]
    NotDoublyStochastic {
        axis: &'static str,
        index: usize,
        sum: f64,
    },

    #[error("weight matrix must be square, row {row} has {len} entries for {n} nodes")]
    RaggedMatrix { row: usize, len: usize, n: usize },

    #[error("weight entry ({0}, {1}) = {2} is outside [0, 1]")]
    WeightOutOfRange(usize, usize, f64),

    #[error("power iteration did not reach tolerance {tol:e} within {iters} iterations")]
    PowerIterationStall { iters: usize, tol: f64 },

    #[error("spectral gap {sigma} is not below 1; the network cannot reach consensus")]
    NoSpectralGap { sigma: f64 },

    // --- data loading and partitioning --------------------------------------
    #[error("line {line}: {cause}")]
    Parse { line: usize, cause: String },

    #[error("line {line}: feature index {index} exceeds declared dimension {dim}")]
    FeatureDimension {
        line: usize,
        index: usize,
        dim: usize,
    },

    #[error("labels {0:?} match none of the supported conventions {{-1,+1}}, {{0,1}}, {{1,2}}")]
    LabelConvention(Vec<f64>),

    #[error("sample {0} has a zero feature vector and cannot be normalized")]
    ZeroFeatureVector(usize),

    #[error("cannot split {total} samples across {nodes} nodes with at least one sample each")]
    InsufficientSamples { total: usize, nodes: usize },

    #[error("partition proportions invalid: {0}")]
    BadProportions(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    // --- objective oracles ---------------------------------------------------
    #[error("regularization must be a finite positive number, got {0}")]
    InvalidRegularization(f64),

    #[error("node index {node} out of range for {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },

    #[error("component index {index} out of range for node {node} with {len} components")]
    ComponentOutOfRange {
        node: usize,
        index: usize,
        len: usize,
    },

    #[error("expected dimension {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("node {node} sample {index} has norm {norm}; smoothness constants assume unit-norm features")]
    NotUnitNorm {
        node: usize,
        index: usize,
        norm: f64,
    },

    #[error("every node needs at least one component, node {0} has none")]
    EmptyNode(usize),

    // --- algorithm state ------------------------------------------------------
    #[error("step size must be a finite positive number, got {0}")]
    InvalidStepSize(f64),

    #[error("snapshot period must be at least 1, got {0}")]
    InvalidSnapshotPeriod(usize),

    #[error("node state does not match the configured algorithm ({0})")]
    StateMismatch(&'static str),

    // --- tuning ----------------------------------------------------------------
    #[error("tuning assumption violated: {0}")]
    AssumptionViolation(String),

    // --- engine ------------------------------------------------------------------
    #[error("configuration error: {0}")]
    Config(String),

    #[error("reference solver stalled: gradient norm {grad_norm:e} after {iters} iterations (tolerance {tol:e})")]
    ReferenceStall {
        iters: u64,
        grad_norm: f64,
        tol: f64,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("json serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}
