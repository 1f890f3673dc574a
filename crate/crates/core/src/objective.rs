//! Finite-sum objectives with per-component gradient oracles.
//!
//! The global cost is F(x) = (1/n) sum_i f_i(x) with f_i(x) = (1/m_i) sum_j
//! f_{i,j}(x).  Algorithms only ever see the oracle surface (values,
//! gradients, counts, constants), never the data, so they stay agnostic to
//! the loss.  Two losses are provided:
//!
//! * regularized logistic: f_{i,j}(x) = log(1 + exp(-xi . x^T theta)) +
//!   (lambda/2) ||x||^2, the experiment objective;
//! * quadratic: f_{i,j}(x) = 1/2 ||x - c_{i,j}||^2, whose exact minimizer
//!   makes it the test objective.

use serde::{Deserialize, Serialize};

use crate::dataio::Sample;
use crate::error::{Error, Result};

/// Strong-convexity modulus mu and smoothness constant L of the global cost,
/// with the condition number Q = L/mu.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub mu: f64,
    pub l_smooth: f64,
}

impl SmoothnessConstants {
    pub fn q(&self) -> f64 {
        self.l_smooth / self.mu
    }
}

/// mu = lambda and L = lambda + 1/4 for logistic loss over unit-norm
/// features (the per-component Hessian is bounded by ||theta||^2/4 + lambda).
pub fn constants_logistic(lambda: f64) -> Result<SmoothnessConstants> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidRegularization(lambda));
    }
    Ok(SmoothnessConstants {
        mu: lambda,
        l_smooth: lambda + 0.25,
    })
}

/// log(1 + exp(-z)) without overflow for |z| up to ~1e3 and beyond.
#[inline]
fn log1p_exp_neg(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// sigmoid(-z) = 1 / (1 + exp(z)), branch on sign to keep exp in range.
#[inline]
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Regularized logistic component: value and gradient at x.
pub fn logistic_component(sample: &Sample, lambda: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    if sample.features.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: sample.features.len(),
            got: x.len(),
            context: "logistic component",
        });
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidRegularization(lambda));
    }
    let margin: f64 = sample
        .features
        .iter()
        .zip(x)
        .map(|(t, xi)| t * xi)
        .sum::<f64>()
        * sample.label;
    let value = log1p_exp_neg(margin) + 0.5 * lambda * x.iter().map(|v| v * v).sum::<f64>();
    let slope = sigmoid_neg(margin) * sample.label;
    let gradient = sample
        .features
        .iter()
        .zip(x)
        .map(|(t, xi)| -slope * t + lambda * xi)
        .collect();
    Ok((value, gradient))
}

/// Quadratic component: value 1/2 ||x - c||^2 and gradient x - c.
pub fn quadratic_component(center: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
    if center.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: center.len(),
            got: x.len(),
            context: "quadratic component",
        });
    }
    let gradient: Vec<f64> = x.iter().zip(center).map(|(xi, c)| xi - c).collect();
    let value = 0.5 * gradient.iter().map(|g| g * g).sum::<f64>();
    Ok((value, gradient))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Kind {
    Logistic { lambda: f64, nodes: Vec<Vec<Sample>> },
    Quadratic { nodes: Vec<Vec<Vec<f64>>> },
}

/// A finite-sum problem distributed over n nodes.
#[derive(Debug, Clone)]
pub struct Objective {
    dim: usize,
    kind: Kind,
}

impl Objective {
    /// Logistic regression with ridge term lambda > 0.  Features must be
    /// unit-norm (within 1e-6) because the advertised constants assume it.
    pub fn logistic(nodes: Vec<Vec<Sample>>, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::InvalidRegularization(lambda));
        }
        let dim = Self::check_nonempty(&nodes, |s| s.features.len())?;
        for (i, node) in nodes.iter().enumerate() {
            for (j, s) in node.iter().enumerate() {
                if s.features.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: s.features.len(),
                        context: "logistic sample",
                    });
                }
                let norm = s.features.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::NotUnitNorm {
                        node: i,
                        index: j,
                        norm,
                    });
                }
            }
        }
        Ok(Objective {
            dim,
            kind: Kind::Logistic { lambda, nodes },
        })
    }

    /// Quadratic test objective from per-node center lists.
    pub fn quadratic(nodes: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let dim = Self::check_nonempty(&nodes, Vec::len)?;
        for node in &nodes {
            for c in node {
                if c.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: c.len(),
                        context: "quadratic center",
                    });
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("quadratic centers must be finite".into()));
                }
            }
        }
        Ok(Objective {
            dim,
            kind: Kind::Quadratic { nodes },
        })
    }

    fn check_nonempty<T>(nodes: &[Vec<T>], dim_of: impl Fn(&T) -> usize) -> Result<usize> {
        if nodes.is_empty() {
            return Err(Error::EmptyGraph);
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.is_empty() {
                return Err(Error::EmptyNode(i));
            }
        }
        Ok(dim_of(&nodes[0][0]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        match &self.kind {
            Kind::Logistic { nodes, .. } => nodes.len(),
            Kind::Quadratic { nodes } => nodes.len(),
        }
    }

    /// Component count m_i of one node.
    pub fn components(&self, node: usize) -> usize {
        match &self.kind {
            Kind::Logistic { nodes, .. } => nodes[node].len(),
            Kind::Quadratic { nodes } => nodes[node].len(),
        }
    }

    pub fn m_max(&self) -> usize {
        (0..self.num_nodes()).map(|i| self.components(i)).max().unwrap_or(0)
    }

    pub fn m_min(&self) -> usize {
        (0..self.num_nodes()).map(|i| self.components(i)).min().unwrap_or(0)
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, Kind::Quadratic { .. })
    }

    /// Smoothness/strong-convexity constants of the global cost.
    pub fn constants(&self) -> SmoothnessConstants {
        match &self.kind {
            Kind::Logistic { lambda, .. } => {
                constants_logistic(*lambda).expect("validated at construction")
            }
            Kind::Quadratic { .. } => SmoothnessConstants {
                mu: 1.0,
                l_smooth: 1.0,
            },
        }
    }

    fn check_indices(&self, node: usize, index: usize) -> Result<()> {
        let n = self.num_nodes();
        if node >= n {
            return Err(Error::NodeOutOfRange { node, nodes: n });
        }
        let len = self.components(node);
        if index >= len {
            return Err(Error::ComponentOutOfRange { node, index, len });
        }
        Ok(())
    }

    pub fn component_value(&self, node: usize, index: usize, x: &[f64]) -> Result<f64> {
        self.check_indices(node, index)?;
        match &self.kind {
            Kind::Logistic { lambda, nodes } => {
                Ok(logistic_component(&nodes[node][index], *lambda, x)?.0)
            }
            Kind::Quadratic { nodes } => Ok(quadratic_component(&nodes[node][index], x)?.0),
        }
    }

    pub fn component_gradient(&self, node: usize, index: usize, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.component_gradient_into(node, index, x, &mut out)?;
        Ok(out)
    }

    /// Allocation-free gradient oracle for the hot loop.
    pub fn component_gradient_into(
        &self,
        node: usize,
        index: usize,
        x: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        self.check_indices(node, index)?;
        if x.len() != self.dim || out.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
                context: "gradient oracle",
            });
        }
        match &self.kind {
            Kind::Logistic { lambda, nodes } => {
                let s = &nodes[node][index];
                let margin: f64 =
                    s.features.iter().zip(x).map(|(t, xi)| t * xi).sum::<f64>() * s.label;
                let slope = sigmoid_neg(margin) * s.label;
                for ((o, t), xi) in out.iter_mut().zip(&s.features).zip(x) {
                    *o = -slope * t + lambda * xi;
                }
            }
            Kind::Quadratic { nodes } => {
                let c = &nodes[node][index];
                for ((o, ci), xi) in out.iter_mut().zip(c).zip(x) {
                    *o = xi - ci;
                }
            }
        }
        Ok(())
    }

    /// Node batch gradient (1/m_i) sum_j grad f_{i,j}(x).
    pub fn batch_gradient(&self, node: usize, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.batch_gradient_into(node, x, &mut out)?;
        Ok(out)
    }

    pub fn batch_gradient_into(&self, node: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.components(node);
        out.fill(0.0);
        let mut grad = vec![0.0; self.dim];
        for j in 0..m {
            self.component_gradient_into(node, j, x, &mut grad)?;
            for (o, g) in out.iter_mut().zip(&grad) {
                *o += g;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(())
    }

    /// Node batch value f_i(x).
    pub fn batch_value(&self, node: usize, x: &[f64]) -> Result<f64> {
        let m = self.components(node);
        let mut acc = 0.0;
        for j in 0..m {
            acc += self.component_value(node, j, x)?;
        }
        Ok(acc / m as f64)
    }

    /// Global cost F(x) = (1/n) sum_i f_i(x).
    pub fn global_value(&self, x: &[f64]) -> Result<f64> {
        let n = self.num_nodes();
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.batch_value(i, x)?;
        }
        Ok(acc / n as f64)
    }

    /// Global gradient (1/n) sum_i grad f_i(x).
    pub fn global_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.num_nodes();
        let mut out = vec![0.0; self.dim];
        let mut node_grad = vec![0.0; self.dim];
        for i in 0..n {
            self.batch_gradient_into(i, x, &mut node_grad)?;
            for (o, g) in out.iter_mut().zip(&node_grad) {
                *o += g;
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(out)
    }

    /// Exact minimizer when one is known in closed form: for the quadratic,
    /// the average over nodes of per-node center means.
    pub fn closed_form_minimizer(&self) -> Option<Vec<f64>> {
        match &self.kind {
            Kind::Quadratic { nodes } => {
                let mut x = vec![0.0; self.dim];
                for node in nodes {
                    let inv = 1.0 / node.len() as f64;
                    for c in node {
                        for (xi, ci) in x.iter_mut().zip(c) {
                            *xi += ci * inv;
                        }
                    }
                }
                let inv_n = 1.0 / nodes.len() as f64;
                x.iter_mut().for_each(|v| *v *= inv_n);
                Some(x)
            }
            Kind::Logistic { .. } => None,
        }
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn unit_theta(p: usize, seed: u64) -> Vec<f64> {
        let mut s = Stream::new(seed, &[1]);
        let mut v = vec![0.0; p];
        s.fill_gaussian(&mut v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }

    // --- logistic -----------------------------------------------------------

    #[test]
    fn logistic_at_origin_is_ln_two_with_half_sigmoid_gradient() {
        let theta = unit_theta(5, 3);
        let sample = Sample {
            features: theta.clone(),
            label: 1.0,
        };
        let (value, grad) = logistic_component(&sample, 0.0, &[0.0; 5]).unwrap();
        assert!((value - std::f64::consts::LN_2).abs() < 1e-15);
        for (g, t) in grad.iter().zip(&theta) {
            assert!((g - (-t / 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn regularizer_adds_nothing_at_origin() {
        let theta = unit_theta(4, 5);
        let sample = Sample {
            features: theta.clone(),
            label: -1.0,
        };
        let (_, grad) = logistic_component(&sample, 1.0, &[0.0; 4]).unwrap();
        for (g, t) in grad.iter().zip(&theta) {
            assert!((g - (t / 2.0)).abs() < 1e-15, "lambda term must vanish at 0");
        }
    }

    #[test]
    fn logistic_stays_finite_for_huge_margins() {
        let sample = Sample {
            features: vec![1.0],
            label: 1.0,
        };
        for x in [-1000.0, -700.0, 700.0, 1000.0] {
            let (value, grad) = logistic_component(&sample, 0.01, &[x]).unwrap();
            assert!(value.is_finite(), "value at margin {x}");
            assert!(grad[0].is_finite(), "gradient at margin {x}");
        }
        // deep in the tail the loss approaches the hinge asymptote -z
        let (value, _) = logistic_component(&sample, 0.0, &[-800.0]).unwrap();
        assert!((value - 800.0).abs() < 1e-9);
    }

    #[test]
    fn logistic_gradient_norm_respects_unit_feature_bound() {
        let mut stream = Stream::new(8, &[2]);
        for probe in 0..100 {
            let theta = unit_theta(6, 100 + probe);
            let sample = Sample {
                features: theta,
                label: if probe % 2 == 0 { 1.0 } else { -1.0 },
            };
            let mut x = vec![0.0; 6];
            stream.fill_gaussian(&mut x);
            x.iter_mut().for_each(|v| *v *= 3.0);
            let lambda = 0.05;
            let (value, grad) = logistic_component(&sample, lambda, &x).unwrap();
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(value.is_finite());
            assert!(
                gnorm <= 1.0 + lambda * xnorm + 1e-12,
                "gradient norm {gnorm} exceeds bound"
            );
        }
    }

    #[test]
    fn logistic_dimension_mismatch_is_an_error() {
        let sample = Sample {
            features: vec![1.0, 0.0],
            label: 1.0,
        };
        assert!(matches!(
            logistic_component(&sample, 0.1, &[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    // --- quadratic ---------------------------------------------------------

    #[test]
    fn quadratic_vanishes_at_its_center() {
        let (value, grad) = quadratic_component(&[1.5, -2.0], &[1.5, -2.0]).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(grad, vec![0.0, 0.0]);
    }

    #[test]
    fn quadratic_unit_displacement() {
        let (value, grad) = quadratic_component(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(value, 1.0);
        assert_eq!(grad, vec![1.0, 1.0]);
    }

    #[test]
    fn quadratic_minimizer_is_the_mean_of_centers() {
        let obj = Objective::quadratic(vec![
            vec![vec![0.0], vec![2.0]],
            vec![vec![4.0], vec![6.0]],
        ])
        .unwrap();
        let x_star = obj.closed_form_minimizer().unwrap();
        assert_eq!(x_star, vec![3.0]);
        let grad = obj.global_gradient(&x_star).unwrap();
        assert!(grad[0].abs() < 1e-15);
    }

    #[test]
    fn uneven_nodes_weight_per_node_means_equally() {
        // node means are 1 and 5; F averages nodes, not raw centers
        let obj = Objective::quadratic(vec![
            vec![vec![0.0], vec![2.0]],
            vec![vec![5.0]],
        ])
        .unwrap();
        assert_eq!(obj.closed_form_minimizer().unwrap(), vec![3.0]);
    }

    // --- constants -----------------------------------------------------------

    #[test]
    fn paper_regularization_gives_condition_number_26() {
        let c = constants_logistic(0.01).unwrap();
        assert_eq!(c.mu, 0.01);
        assert_eq!(c.l_smooth, 0.26);
        assert!((c.q() - 26.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_regularization_gives_condition_number_2() {
        let c = constants_logistic(0.25).unwrap();
        assert!((c.q() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn condition_number_falls_monotonically_toward_one() {
        let mut prev = f64::INFINITY;
        for lambda in [0.01, 0.1, 1.0, 10.0, 1e6] {
            let q = constants_logistic(lambda).unwrap().q();
            assert!(q < prev && q > 1.0);
            prev = q;
        }
        assert!((prev - 1.0) < 1e-6, "Q should approach 1, got {prev}");
    }

    #[test]
    fn nonpositive_regularization_is_rejected() {
        assert!(matches!(
            constants_logistic(0.0),
            Err(Error::InvalidRegularization(_))
        ));
        assert!(constants_logistic(-0.5).is_err());
        assert!(constants_logistic(f64::NAN).is_err());
    }

    #[test]
    fn logistic_smoothness_bound_holds_on_random_pairs() {
        let lambda = 0.05;
        let l_smooth = constants_logistic(lambda).unwrap().l_smooth;
        let mut stream = Stream::new(17, &[0]);
        for probe in 0..200 {
            let sample = Sample {
                features: unit_theta(4, 500 + probe),
                label: if probe % 2 == 0 { 1.0 } else { -1.0 },
            };
            let mut x = vec![0.0; 4];
            let mut y = vec![0.0; 4];
            stream.fill_gaussian(&mut x);
            stream.fill_gaussian(&mut y);
            let (_, gx) = logistic_component(&sample, lambda, &x).unwrap();
            let (_, gy) = logistic_component(&sample, lambda, &y).unwrap();
            let diff_g: f64 = gx
                .iter()
                .zip(&gy)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let diff_x: f64 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(
                diff_g <= l_smooth * diff_x + 1e-12,
                "Lipschitz violation: {diff_g} > L*{diff_x}"
            );
        }
    }

    // --- batch oracles ----------------------------------------------------------

    #[test]
    fn batch_gradient_of_single_component_is_that_component() {
        let obj = Objective::quadratic(vec![vec![vec![2.0, -1.0]]]).unwrap();
        let x = vec![0.5, 0.5];
        assert_eq!(
            obj.batch_gradient(0, &x).unwrap(),
            obj.component_gradient(0, 0, &x).unwrap()
        );
    }

    #[test]
    fn batch_gradient_matches_direct_summation() {
        let nodes = vec![crate::dataio::synth_logistic(9, 4, 3, 1.0).unwrap()];
        let obj = Objective::logistic(nodes.clone(), 0.1).unwrap();
        let x = vec![0.3, -0.2, 0.1, 0.7];
        let batch = obj.batch_gradient(0, &x).unwrap();
        let mut direct = vec![0.0; 4];
        for j in 0..9 {
            let g = obj.component_gradient(0, j, &x).unwrap();
            for (d, gi) in direct.iter_mut().zip(&g) {
                *d += gi / 9.0;
            }
        }
        for (a, b) in batch.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn quadratic_batch_gradient_is_distance_to_mean_center() {
        let obj = Objective::quadratic(vec![vec![vec![1.0], vec![3.0]]]).unwrap();
        let g = obj.batch_gradient(0, &[0.0]).unwrap();
        assert_eq!(g, vec![-2.0]);
    }

    // --- construction validation ---------------------------------------------------

    #[test]
    fn construction_rejects_bad_inputs() {
        assert!(Objective::logistic(vec![], 0.1).is_err());
        assert!(Objective::logistic(vec![vec![]], 0.1).is_err());
        let ok = Sample {
            features: vec![1.0],
            label: 1.0,
        };
        assert!(Objective::logistic(vec![vec![ok.clone()]], 0.0).is_err());
        let long = Sample {
            features: vec![3.0],
            label: 1.0,
        };
        assert!(matches!(
            Objective::logistic(vec![vec![long]], 0.1),
            Err(Error::NotUnitNorm { .. })
        ));
        assert!(matches!(
            Objective::quadratic(vec![vec![vec![1.0], vec![1.0, 2.0]]]),
            Err(Error::DimensionMismatch { .. })
        ));
        let obj = Objective::logistic(vec![vec![ok]], 0.1).unwrap();
        assert!(matches!(
            obj.component_value(0, 5, &[0.0]),
            Err(Error::ComponentOutOfRange { .. })
        ));
        assert!(matches!(
            obj.component_value(3, 0, &[0.0]),
            Err(Error::NodeOutOfRange { .. })
        ));
    }

    // --- finite differences (full sweep lives in the integration oracles) -----

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-6;
        let lambda = 0.2;
        let theta = unit_theta(3, 77);
        let sample = Sample {
            features: theta,
            label: -1.0,
        };
        let x = vec![0.4, -0.9, 0.2];
        let (_, grad) = logistic_component(&sample, lambda, &x).unwrap();
        for d in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[d] += h;
            xm[d] -= h;
            let fp = logistic_component(&sample, lambda, &xp).unwrap().0;
            let fm = logistic_component(&sample, lambda, &xm).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (grad[d] - fd).abs() <= 1e-5 * grad[d].abs().max(1.0),
                "coordinate {d}: analytic {} vs fd {fd}",
                grad[d]
            );
        }
    }
}
