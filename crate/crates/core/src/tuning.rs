//! Theory-backed step sizes, inner-loop lengths, and rate predictions.
//!
//! The convergence theory for the gradient-tracking variance-reduced methods
//! comes with explicit constants.  This module evaluates those closed forms
//! so runs can be configured from (mu, L, sigma, M, m) alone and so tests can
//! compare measured decay against a concrete predicted rate.  The theory's
//! leading constants are unspecified, so predicted counts are order-correct
//! rather than exact; reports carry that caveat.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::SmoothnessConstants;

/// What one application of `rate` contracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateScope {
    Iteration,
    OuterLoop,
}

/// Step size and predicted geometric decay for one method on one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub alpha: f64,
    /// Snapshot refresh period; None for methods without an inner loop.
    pub svrg_t: Option<u64>,
    /// Contraction factor applied once per `rate_scope`.  May round to 1.0
    /// when the contraction sits below f64 resolution; see `rate_complement`.
    pub rate: f64,
    /// 1 - rate held exactly, since the closed forms produce it directly and
    /// it can be smaller than the spacing of floats near 1.
    pub rate_complement: f64,
    pub rate_scope: RateScope,
    /// Whether the local sample counts dominate the network/conditioning
    /// term; None when the caller did not supply sample counts.
    pub big_data: Option<bool>,
    pub note: String,
}

const PREDICTION_NOTE: &str =
    "counts are up to an unreported constant factor (c treated as 1)";

impl TuningReport {
    /// Predicted number of rate applications to reach a relative error eps,
    /// ceil(ln eps / ln rate) with unit leading constant.  Counts iterations
    /// for per-iteration rates and outer loops for per-outer-loop rates.
    pub fn iters_to_eps(&self, eps: f64) -> u64 {
        assert!(
            eps.is_finite() && eps > 0.0,
            "target accuracy must be a positive finite number, got {eps}"
        );
        if eps >= 1.0 {
            return 0;
        }
        // ln(1 - complement) via ln_1p stays accurate when rate is nearly 1
        (eps.ln() / (-self.rate_complement).ln_1p()).ceil() as u64
    }
}

fn check_constants(c: SmoothnessConstants, sigma: f64) -> Result<()> {
    if !(c.mu.is_finite() && c.mu > 0.0) {
        return Err(Error::AssumptionViolation(format!(
            "strong convexity requires mu > 0, got {}",
            c.mu
        )));
    }
    if !(c.l_smooth.is_finite() && c.l_smooth >= c.mu) {
        return Err(Error::AssumptionViolation(format!(
            "smoothness requires L >= mu, got L = {}, mu = {}",
            c.l_smooth, c.mu
        )));
    }
    if !(sigma.is_finite() && (0.0..1.0).contains(&sigma)) {
        return Err(Error::AssumptionViolation(format!(
            "connectivity requires 0 <= sigma < 1, got {sigma}"
        )));
    }
    Ok(())
}

fn check_counts(m_max: usize, m_min: usize) -> Result<()> {
    if m_min < 1 || m_max < m_min {
        return Err(Error::AssumptionViolation(format!(
            "sample counts require M >= m >= 1, got M = {m_max}, m = {m_min}"
        )));
    }
    Ok(())
}

/// Step size and per-iteration rate for the table-based estimator:
/// alpha = min{1/(5 mu M), m (1-sigma^2)^2 / (320 M L Q)},
/// rate  = 1 - min{1/(20 M), m (1-sigma^2)^2 / (1280 M Q^2)}.
pub fn saga_tuning(
    c: SmoothnessConstants,
    sigma: f64,
    m_max: usize,
    m_min: usize,
) -> Result<TuningReport> {
    check_constants(c, sigma)?;
    check_counts(m_max, m_min)?;
    let q = c.q();
    let gap2 = {
        let g = 1.0 - sigma * sigma;
        g * g
    };
    let big_m = m_max as f64;
    let small_m = m_min as f64;
    let alpha = (1.0 / (5.0 * c.mu * big_m))
        .min(small_m * gap2 / (320.0 * big_m * c.l_smooth * q));
    let complement = (1.0 / (20.0 * big_m)).min(small_m * gap2 / (1280.0 * big_m * q * q));
    Ok(TuningReport {
        alpha,
        svrg_t: None,
        rate: 1.0 - complement,
        rate_complement: complement,
        rate_scope: RateScope::Iteration,
        big_data: Some(big_data_check(m_max, m_min, q, sigma)),
        note: PREDICTION_NOTE.into(),
    })
}

/// Step size, snapshot period, and per-outer-loop rate for the snapshot
/// estimator: alpha = (1-sigma^2)^2 / (187 Q L),
/// T = ceil(1496 Q^2 / (1-sigma^2)^2 * ln(200 Q)), rate 0.7 per outer loop.
pub fn svrg_tuning(c: SmoothnessConstants, sigma: f64) -> Result<TuningReport> {
    check_constants(c, sigma)?;
    let q = c.q();
    let gap2 = {
        let g = 1.0 - sigma * sigma;
        g * g
    };
    let alpha = gap2 / (187.0 * q * c.l_smooth);
    let period = (1496.0 * q * q / gap2 * (200.0 * q).ln()).ceil();
    Ok(TuningReport {
        alpha,
        svrg_t: Some(period as u64),
        rate: 0.7,
        rate_complement: 0.3,
        rate_scope: RateScope::OuterLoop,
        big_data: None,
        note: PREDICTION_NOTE.into(),
    })
}

/// True when every node's sample count dominates the network/conditioning
/// term (m >= 10 Q^2/(1-sigma)^2) and counts are near-balanced (M/m <= 1.25).
/// In this regime the step size and rate lose their dependence on sigma.
pub fn big_data_check(m_max: usize, m_min: usize, q: f64, sigma: f64) -> bool {
    if m_min == 0 || m_max < m_min || !(0.0..1.0).contains(&sigma) || q < 1.0 {
        return false;
    }
    let one_minus = 1.0 - sigma;
    let threshold = 10.0 * q * q / (one_minus * one_minus);
    m_min as f64 >= threshold && m_max as f64 / m_min as f64 <= 1.25
}

// ---------------------------------------------------------------------------
