//! Decentralized stochastic optimization over simulated peer networks.
//!
//! The crate simulates n nodes, each holding a private finite-sum cost,
//! cooperating over a doubly stochastic gossip matrix to minimize the global
//! average cost.  It provides gradient-tracking variance-reduced methods and
//! two classic baselines, plus the graph/data/tuning machinery needed to run
//! and evaluate them:
//!
//! * [`graph`]: topologies, mixing matrices, spectral gap;
//! * [`dataio`]: sparse sample format, synthetic data, node partitioning;
//! * [`objective`]: finite-sum costs with component gradient oracles;
//! * [`algos`]: the optimizer state machines;
//! * [`tuning`]: theory-backed step sizes and rate predictions;
//! * [`engine`]: full experiment runs with metric traces;
//! * [`rng`]: counter-based deterministic random streams.
//!
//! Everything is deterministic given a seed: reruns, and runs at different
//! worker counts, produce byte-identical traces.

pub mod algos;
pub mod dataio;
pub mod engine;
pub mod error;
pub mod graph;
pub mod objective;
pub mod rng;
pub mod tuning;

pub use error::{Error, Result};
