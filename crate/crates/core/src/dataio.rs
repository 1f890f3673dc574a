//! Dataset loading, normalization, synthesis, and partitioning.
//!
//! Reads LIBSVM-format text (plain or gzipped), densifies features, maps
//! binary labels to {-1, +1}, and splits samples into contiguous per-node
//! ranges.  A small synthetic generator produces two-cluster logistic
//! problems for desk-scale experiments, deterministic in the seed.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// One labeled observation with dense features.  The label is +1 or -1 after
/// parsing; feature vectors are unit length after `normalize_unit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
}

// ---------------------------------------------------------------------------
// parsing and writing

/// Parses LIBSVM text: `<label> <idx>:<val> ...` per line, 1-based strictly
/// increasing indices, LF or CRLF endings, blank lines skipped.  `dim` fixes
/// the feature dimension; `None` uses the maximum index seen.  Labels must
/// form a subset of {-1,+1}, {0,1}, or {1,2}; the smaller value maps to -1.
pub fn parse_libsvm<R: BufRead>(reader: R, dim: Option<usize>) -> Result<Vec<Sample>> {
    let mut raw: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut max_index = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a first token");
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: line_no,
            cause: format!("non-numeric label {label_tok:?}"),
        })?;

        let mut features = Vec::new();
        let mut prev_index = 0usize;
        for tok in tokens {
            let (idx_str, val_str) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                cause: format!("malformed feature token {tok:?}, expected idx:val"),
            })?;
            let index: usize = idx_str.parse().map_err(|_| Error::Parse {
                line: line_no,
                cause: format!("non-integer feature index {idx_str:?}"),
            })?;
            let value: f64 = val_str.parse().map_err(|_| Error::Parse {
                line: line_no,
                cause: format!("non-numeric feature value {val_str:?}"),
            })?;
            if index == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    cause: "feature indices are 1-based, got 0".into(),
                });
            }
            if index <= prev_index {
                return Err(Error::Parse {
                    line: line_no,
                    cause: format!("feature index {index} not strictly increasing"),
                });
            }
            if let Some(p) = dim {
                if index > p {
                    return Err(Error::FeatureDimension {
                        line: line_no,
                        index,
                        dim: p,
                    });
                }
            }
            prev_index = index;
            features.push((index, value));
        }
        max_index = max_index.max(prev_index);
        raw.push((label, features));
    }

    let p = dim.unwrap_or(max_index);
    let labels: Vec<f64> = raw.iter().map(|(l, _)| *l).collect();
    let map = label_map(labels.into_iter())?;
    Ok(raw
        .into_iter()
        .map(|(label, sparse)| {
            let mut features = vec![0.0; p];
            for (index, value) in sparse {
                features[index - 1] = value;
            }
            Sample {
                features,
                label: map(label),
            }
        })
        .collect())
}

/// Detects which binary label convention the dataset uses and returns the
/// mapping to {-1, +1}.  Conventions are tried in order, so a single-label
/// dataset resolves to the first convention containing it.
fn label_map(labels: impl Iterator<Item = f64>) -> Result<impl Fn(f64) -> f64> {
    let mut distinct: Vec<f64> = Vec::new();
    for l in labels {
        if !distinct.contains(&l) {
            distinct.push(l);
            if distinct.len() > 2 {
                distinct.sort_by(f64::total_cmp);
                return Err(Error::LabelConvention(distinct));
            }
        }
    }
    let conventions: [[f64; 2]; 3] = [[-1.0, 1.0], [0.0, 1.0], [1.0, 2.0]];
    let chosen = conventions
        .into_iter()
        .find(|conv| distinct.iter().all(|l| conv.contains(l)))
        .ok_or_else(|| {
            let mut d = distinct.clone();
            d.sort_by(f64::total_cmp);
            Error::LabelConvention(d)
        })?;
    Ok(move |l: f64| if l == chosen[0] { -1.0 } else { 1.0 })
}

/// Writes samples in LIBSVM format with 1-based indices, skipping exact
/// zeros.  Values print in shortest round-trip form, so parse(write(s)) == s.
pub fn write_libsvm<W: Write>(samples: &[Sample], writer: &mut W) -> Result<()> {
    for s in samples {
        let label = if s.label > 0.0 { "+1" } else { "-1" };
        write!(writer, "{label}")?;
        for (i, &v) in s.features.iter().enumerate() {
            if v != 0.0 {
                write!(writer, " {}:{}", i + 1, v)?;
            }
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Loads a LIBSVM file; paths ending in `.gz` are decompressed transparently.
pub fn load_libsvm(path: &Path, dim: Option<usize>) -> Result<Vec<Sample>> {
    let file = File::open(path)
        .map_err(|e| Error::Config(format!("cannot open dataset {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let gz = flate2::read::GzDecoder::new(file);
        parse_libsvm(BufReader::new(gz), dim)
    } else {
        parse_libsvm(BufReader::new(file), dim)
    }
}

/// Reads everything from `reader`, decompressing when `gzipped`.
pub fn parse_libsvm_maybe_gz<R: Read>(reader: R, gzipped: bool, dim: Option<usize>) -> Result<Vec<Sample>> {
    if gzipped {
        parse_libsvm(BufReader::new(flate2::read::GzDecoder::new(reader)), dim)
    } else {
        parse_libsvm(BufReader::new(reader), dim)
    }
}

// ---------------------------------------------------------------------------
// normalization and synthesis

/// Scales every feature vector to unit Euclidean norm.  A zero vector cannot
/// be normalized and is reported by sample index.
pub fn normalize_unit(samples: &mut [Sample]) -> Result<()> {
    for (i, s) in samples.iter_mut().enumerate() {
        let norm = s.features.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroFeatureVector(i));
        }
        s.features.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(())
}

/// Two Gaussian clusters at +/- separation along a random unit direction,
/// labels +1/-1 alternating, unit-normalized.  Sample t depends only on
/// (seed, t), so prefixes of a dataset are stable as n_samples grows.
pub fn synth_logistic(n_samples: usize, p: usize, seed: u64, separation: f64) -> Result<Vec<Sample>> {
    if n_samples < 2 {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least 2 samples, got {n_samples}"
        )));
    }
    if p == 0 {
        return Err(Error::Config("synthetic dimension must be at least 1".into()));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::Config(format!(
            "cluster separation must be finite and nonnegative, got {separation}"
        )));
    }

    let mut dir_stream = Stream::new(seed, &[u64::from(b'u')]);
    let mut direction = vec![0.0; p];
    loop {
        dir_stream.fill_gaussian(&mut direction);
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            direction.iter_mut().for_each(|x| *x /= norm);
            break;
        }
    }

    let mut samples = Vec::with_capacity(n_samples);
    for t in 0..n_samples {
        let label = if t % 2 == 0 { 1.0 } else { -1.0 };
        let mut stream = Stream::new(seed, &[u64::from(b's'), t as u64]);
        let mut features = vec![0.0; p];
        stream.fill_gaussian(&mut features);
        for (f, u) in features.iter_mut().zip(&direction) {
            *f += label * separation * u;
        }
        samples.push(Sample { features, label });
    }
    normalize_unit(&mut samples)?;
    Ok(samples)
}

/// Deterministic Fisher-Yates shuffle, for decoupling node assignment from
/// dataset order before a contiguous partition.
pub fn shuffle(samples: &mut [Sample], seed: u64) {
    let mut stream = Stream::new(seed, &[u64::from(b'p')]);
    for i in (1..samples.len()).rev() {
        let j = stream.next_index(i + 1);
        samples.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// partitioning

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PartitionMode {
    Even,
    Proportional(Vec<f64>),
}

/// Contiguous per-node index ranges covering 0..N with every node nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    ranges: Vec<Range<usize>>,
}

impl Partition {
    pub fn nodes(&self) -> usize {
        self.ranges.len()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn counts(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    /// M = max_i m_i.
    pub fn m_max(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).max().unwrap_or(0)
    }

    /// m = min_i m_i.
    pub fn m_min(&self) -> usize {
        self.ranges.iter().map(|r| r.len()).min().unwrap_or(0)
    }

    pub fn node_slice<'a, T>(&self, data: &'a [T], node: usize) -> &'a [T] {
        &data[self.ranges[node].clone()]
    }

    /// Splits owned data into per-node vectors following the ranges.
    pub fn apply<T: Clone>(&self, data: &[T]) -> Vec<Vec<T>> {
        self.ranges.iter().map(|r| data[r.clone()].to_vec()).collect()
    }
}

/// Splits N samples over n nodes.  Even mode hands the first N mod n nodes
/// one extra sample; proportional mode rounds N*p_i and charges the rounding
/// remainder to the node with the largest proportion.
pub fn partition(total: usize, nodes: usize, mode: &PartitionMode) -> Result<Partition> {
    if nodes == 0 {
        return Err(Error::EmptyGraph);
    }
    if total < nodes {
        return Err(Error::InsufficientSamples { total, nodes });
    }
    let counts: Vec<usize> = match mode {
        PartitionMode::Even => {
            let base = total / nodes;
            let extra = total % nodes;
            (0..nodes).map(|i| base + usize::from(i < extra)).collect()
        }
        PartitionMode::Proportional(props) => {
            if props.len() != nodes {
                return Err(Error::BadProportions(format!(
                    "{} proportions for {} nodes",
                    props.len(),
                    nodes
                )));
            }
            if props.iter().any(|&p| !p.is_finite() || p <= 0.0) {
                return Err(Error::BadProportions(
                    "all proportions must be positive".into(),
                ));
            }
            let sum: f64 = props.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::BadProportions(format!("sum {sum} is not 1")));
            }
            let mut counts: Vec<i64> = props
                .iter()
                .map(|&p| (total as f64 * p).round() as i64)
                .collect();
            let assigned: i64 = counts.iter().sum();
            // strict comparison keeps the first node among ties
            let mut largest = 0;
            for (i, &p) in props.iter().enumerate() {
                if p > props[largest] {
                    largest = i;
                }
            }
            counts[largest] += total as i64 - assigned;
            if counts.iter().any(|&c| c < 1) {
                return Err(Error::BadProportions(
                    "rounded counts leave a node without samples".into(),
                ));
            }
            counts.into_iter().map(|c| c as usize).collect()
        }
    };

    let mut ranges = Vec::with_capacity(nodes);
    let mut start = 0usize;
    for c in counts {
        ranges.push(start..start + c);
        start += c;
    }
    debug_assert_eq!(start, total);
    Ok(Partition { ranges })
}

// ---------------------------------------------------------------------------
