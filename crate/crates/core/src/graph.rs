//! Network topologies and doubly stochastic mixing matrices.
//!
//! A `Topology` is a strongly connected directed graph with mandatory
//! self-loops; an edge (s, r) means node r hears node s.  A `MixingMatrix`
//! assigns consensus weights W over a topology, doubly stochastic within
//! 1e-12, together with the contraction quantity
//! `sigma = ||W - (1/n) 1 1^T||_2`,
//! which drives every step-size and rate formula downstream.  sigma is
//! computed by power iteration on (W-J)^T (W-J); tests cross-check it against
//! a dense SVD.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Relative tolerance for the power-iteration residual.
const POWER_TOL: f64 = 1e-10;
/// Doubly stochastic row/column sum tolerance.
const STOCHASTIC_TOL: f64 = 1e-12;
/// Retry budget for geometric graphs that sample disconnected.
const GEOMETRIC_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Exponential,
    Complete,
    Geometric,
    Custom,
}

/// Directed communication graph.  Edges are ordered (sender, receiver) pairs
/// held in a sorted set so construction is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    n: usize,
    kind: TopologyKind,
    edges: BTreeSet<(usize, usize)>,
}

impl Topology {
    /// Builds a custom topology.  Self-loops are inserted for every node;
    /// the result must be strongly connected.
    pub fn custom(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (s, r) in edges {
            if s >= n || r >= n {
                return Err(Error::EdgeOutOfRange(s, r, n));
            }
            set.insert((s, r));
        }
        Self::finish(n, TopologyKind::Custom, set)
    }

    fn finish(n: usize, kind: TopologyKind, mut edges: BTreeSet<(usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        for i in 0..n {
            edges.insert((i, i));
        }
        let t = Topology { n, kind, edges };
        if !t.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, sender: usize, receiver: usize) -> bool {
        self.edges.contains(&(sender, receiver))
    }

    /// Nodes whose messages reach `i`, in ascending order, self included.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, r)| r == i)
            .map(|&(s, _)| s)
            .collect()
    }

    /// Nodes that hear `i`, in ascending order, self included.
    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        // edges are sorted by sender first, so this range scan is exact
        self.edges
            .range((i, 0)..=(i, self.n - 1))
            .map(|&(_, r)| r)
            .collect()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.in_neighbors(i).len()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.out_neighbors(i).len()
    }

    /// True when the edge relation is symmetric (an undirected graph stored
    /// as ordered pairs).
    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|&(s, r)| self.edges.contains(&(r, s)))
    }

    fn is_strongly_connected(&self) -> bool {
        self.reaches_all(false) && self.reaches_all(true)
    }

    /// BFS from node 0 along forward or reversed edges.
    fn reaches_all(&self, reversed: bool) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut found = 1;
        while let Some(v) = queue.pop_front() {
            let nexts = if reversed {
                self.in_neighbors(v)
            } else {
                self.out_neighbors(v)
            };
            for w in nexts {
                if !seen[w] {
                    seen[w] = true;
                    found += 1;
                    queue.push_back(w);
                }
            }
        }
        found == self.n
    }
}

/// Directed ring: node i receives from (i-1 mod n) and itself.
pub fn build_ring(n: usize) -> Result<Topology> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let edges = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Topology::finish(n, TopologyKind::Ring, edges)
}

/// Directed exponential graph: node i sends to (i + 2^h) mod n for every h
/// with 2^h < n, duplicates collapsed.
pub fn build_exponential(n: usize) -> Result<Topology> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut edges = BTreeSet::new();
    for i in 0..n {
        let mut hop = 1usize;
        while hop < n {
            edges.insert((i, (i + hop) % n));
            hop *= 2;
        }
    }
    Topology::finish(n, TopologyKind::Exponential, edges)
}

/// Complete graph: every ordered pair is an edge.
pub fn build_complete(n: usize) -> Result<Topology> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let edges = (0..n)
        .flat_map(|s| (0..n).map(move |r| (s, r)))
        .collect();
    Topology::finish(n, TopologyKind::Complete, edges)
}

/// Random geometric graph: n points uniform in the unit square, undirected
/// edge iff Euclidean distance <= radius.  Disconnected samples are redrawn
/// with seed+1, seed+2, ... up to a fixed budget.
pub fn build_geometric(n: usize, radius: f64, seed: u64) -> Result<Topology> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    if !radius.is_finite() || radius <= 0.0 {
        return Err(Error::InvalidRadius(radius));
    }
    let r_sq = radius * radius;
    let mut last_seed = seed;
    for attempt in 0..GEOMETRIC_RETRIES {
        last_seed = seed.wrapping_add(attempt as u64);
        let mut stream = Stream::new(last_seed, &[u64::from(b'g')]);
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| (stream.next_f64(), stream.next_f64()))
            .collect();
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = points[i].0 - points[j].0;
                let dy = points[i].1 - points[j].1;
                if dx * dx + dy * dy <= r_sq {
                    edges.insert((i, j));
                    edges.insert((j, i));
                }
            }
        }
        if let Ok(t) = Topology::finish(n, TopologyKind::Geometric, edges) {
            return Ok(t);
        }
    }
    Err(Error::GeometricDisconnected {
        attempts: GEOMETRIC_RETRIES,
        last_seed,
    })
}

// ---------------------------------------------------------------------------

/// Doubly stochastic weight matrix with its contraction quantity sigma.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingMatrix {
    weights: Vec<Vec<f64>>,
    sigma: f64,
}

impl MixingMatrix {
    /// Validates double stochasticity and computes sigma.  Does not check
    /// sigma < 1: disconnected matrices (sigma = 1) are representable, the
    /// topology-aware constructors below reject them.
    pub fn new(weights: Vec<Vec<f64>>) -> Result<Self> {
        let sigma = spectral_gap(&weights)?;
        Ok(MixingMatrix { weights, sigma })
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }
}

fn validate_stochastic(weights: &[Vec<f64>]) -> Result<usize> {
    let n = weights.len();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    for (i, row) in weights.iter().enumerate() {
        if row.len() != n {
            return Err(Error::RaggedMatrix {
                row: i,
                len: row.len(),
                n,
            });
        }
        for (r, &w) in row.iter().enumerate() {
            if !w.is_finite() || !(-STOCHASTIC_TOL..=1.0 + STOCHASTIC_TOL).contains(&w) {
                return Err(Error::WeightOutOfRange(i, r, w));
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotDoublyStochastic {
                axis: "row",
                index: i,
                sum,
            });
        }
    }
    for c in 0..n {
        let sum: f64 = weights.iter().map(|row| row[c]).sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotDoublyStochastic {
                axis: "column",
                index: c,
                sum,
            });
        }
    }
    Ok(n)
}

/// Uniform weights: W[i][r] = 1 / |in-neighborhood of i| for every in-neighbor
/// r including i itself.  Requires balanced in/out degrees, which holds for
/// the ring, exponential, and complete constructions.
pub fn uniform_weights(t: &Topology) -> Result<MixingMatrix> {
    let n = t.n();
    for i in 0..n {
        let (ind, outd) = (t.in_degree(i), t.out_degree(i));
        if ind != outd {
            return Err(Error::DegreeMismatch {
                node: i,
                in_degree: ind,
                out_degree: outd,
            });
        }
    }
    let mut weights = vec![vec![0.0; n]; n];
    for (i, row) in weights.iter_mut().enumerate() {
        let neighbors = t.in_neighbors(i);
        let w = 1.0 / neighbors.len() as f64;
        for r in neighbors {
            row[r] = w;
        }
    }
    let m = MixingMatrix::new(weights)?;
    if m.sigma() >= 1.0 {
        return Err(Error::NoSpectralGap { sigma: m.sigma() });
    }
    Ok(m)
}

/// Metropolis weights for symmetric topologies: for neighbors i != r,
/// W[i][r] = 1 / (1 + max(deg_i, deg_r)) with degrees excluding self-loops;
/// the diagonal absorbs the remainder.  Symmetric, hence doubly stochastic.
pub fn metropolis_weights(t: &Topology) -> Result<MixingMatrix> {
    for (s, r) in t.edges() {
        if !t.has_edge(r, s) {
            return Err(Error::AsymmetricTopology(s, r));
        }
    }
    let n = t.n();
    // degree excluding the self-loop
    let deg: Vec<usize> = (0..n).map(|i| t.in_degree(i) - 1).collect();
    let mut weights = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut off_diag = 0.0;
        for r in t.in_neighbors(i) {
            if r != i {
                let w = 1.0 / (1.0 + deg[i].max(deg[r]) as f64);
                weights[i][r] = w;
                off_diag += w;
            }
        }
        weights[i][i] = 1.0 - off_diag;
    }
    let m = MixingMatrix::new(weights)?;
    if m.sigma() >= 1.0 {
        return Err(Error::NoSpectralGap { sigma: m.sigma() });
    }
    Ok(m)
}

/// Spectral norm of W - (1/n)11^T for a doubly stochastic W, by power
/// iteration on B = (W-J)^T (W-J).  Relative residual tolerance 1e-10,
/// iteration cap 10 n^2; hitting the cap is an error, never a silent return.
pub fn spectral_gap(weights: &[Vec<f64>]) -> Result<f64> {
    let n = validate_stochastic(weights)?;
    if n == 1 {
        return Ok(0.0);
    }

    // (W-J) v = W v - mean(v) 1, and the transpose acts through columns;
    // both maps annihilate the all-ones direction, so B's top eigenpair
    // lives in the consensus-orthogonal subspace automatically.
    let apply_b = |v: &[f64], tmp: &mut [f64], out: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            let row = &weights[i];
            let mut acc = 0.0;
            for r in 0..n {
                acc += row[r] * v[r];
            }
            tmp[i] = acc - mean;
        }
        let tmean = tmp.iter().sum::<f64>() / n as f64;
        for r in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += weights[i][r] * tmp[i];
            }
            out[r] = acc - tmean;
        }
    };

    // fixed pseudo-random start; deterministic and generic with probability 1
    let mut stream = Stream::new(0x5eed, &[n as u64]);
    let mut v: Vec<f64> = (0..n).map(|_| stream.next_f64() - 0.5).collect();
    let norm = l2(&v);
    v.iter_mut().for_each(|x| *x /= norm);

    let mut tmp = vec![0.0; n];
    let mut bv = vec![0.0; n];
    let cap = 10 * n * n;
    for _ in 0..cap {
        apply_b(&v, &mut tmp, &mut bv);
        // Rayleigh quotient for the unit vector v
        let lambda: f64 = v.iter().zip(&bv).map(|(a, b)| a * b).sum();
        if lambda <= f64::EPSILON * f64::EPSILON {
            return Ok(0.0); // W is numerically J on the consensus complement
        }
        let residual: f64 = v
            .iter()
            .zip(&bv)
            .map(|(a, b)| {
                let d = b - lambda * a;
                d * d
            })
            .sum::<f64>()
            .sqrt();
        if residual <= POWER_TOL * lambda {
            return Ok(lambda.sqrt().min(1.0));
        }
        let norm = l2(&bv);
        if norm == 0.0 {
            return Ok(0.0);
        }
        for (vi, bi) in v.iter_mut().zip(&bv) {
            *vi = bi / norm;
        }
    }
    Err(Error::PowerIterationStall {
        iters: cap,
        tol: POWER_TOL,
    })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------

/// Combined topology + weights document for experiment provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub n: usize,
    pub kind: TopologyKind,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl NetworkDoc {
    pub fn new(t: &Topology, w: &MixingMatrix) -> Self {
        NetworkDoc {
            n: t.n(),
            kind: t.kind(),
            edges: t.edges().collect(),
            weights: w.weights().to_vec(),
            sigma: w.sigma(),
        }
    }

    /// Reconstructs validated types from a deserialized document.
    pub fn into_parts(self) -> Result<(Topology, MixingMatrix)> {
        let mut t = Topology::custom(self.n, self.edges)?;
        t.kind = self.kind;
        let w = MixingMatrix::new(self.weights)?;
        if w.n() != t.n() {
            return Err(Error::RaggedMatrix {
                row: 0,
                len: w.n(),
                n: t.n(),
            });
        }
        Ok((t, w))
    }
}

// ---------------------------------------------------------------------------
