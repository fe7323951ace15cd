//! Generalised cross-entropy with per-class weight, additive and
//! multiplicative logit adjustments:
//!
//! ```text
//! ℓ(y, f) = ω_y · log(1 + Σ_{k≠y} exp(l_k − l_y) · exp(Δ_k f_k − Δ_y f_y))
//!         = ω_y · (LSE(z) − z_y),           z_k = l_k + Δ_k f_k
//! ```
//!
//! plus a numeric Bayes-score oracle used to check Fisher consistency for
//! weighted errors.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attributes::{self, names, AttributeTable};
use crate::cap_map::{self, BasisFunction, BasisSet, CapWeights, StrategyGrad, StrategyVectors};
use crate::math::{self, Matrix};
use crate::{Error, Result};

fn check_inputs(f: &[f64], y: usize, s: &StrategyVectors) -> Result<()> {
    let k = f.len();
    s.validate(k)?;
    if y >= k {
        return Err(Error::invalid("label", alloc::format!("{y} is not below K = {k}")));
    }
    if let Some(i) = f.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "logits", index: i });
    }
    Ok(())
}

/// `z_k = l_k + Δ_k f_k`.
pub fn adjusted_logits(f: &[f64], s: &StrategyVectors) -> Vec<f64> {
    f.iter()
        .zip(&s.l)
        .zip(&s.delta)
        .map(|((&fk, &lk), &dk)| lk + dk * fk)
        .collect()
}

/// `LSE(z) − z_y`, the loss before the class weight.
fn base_term(z: &[f64], y: usize) -> f64 {
    (math::log_sum_exp(z) - z[y]).max(0.0)
}

pub fn cap_ce_loss(f: &[f64], y: usize, s: &StrategyVectors) -> Result<f64> {
    check_inputs(f, y, s)?;
    let z = adjusted_logits(f, s);
    Ok(s.omega[y] * base_term(&z, y))
}

/// `∂ℓ/∂f_k = ω_y (p_k Δ_k − 1{k=y} Δ_y)`, `p = softmax(z)`.
pub fn cap_ce_grad_f(f: &[f64], y: usize, s: &StrategyVectors) -> Result<Vec<f64>> {
    check_inputs(f, y, s)?;
    let p = math::softmax(&adjusted_logits(f, s));
    let w = s.omega[y];
    Ok(p.iter()
        .enumerate()
        .map(|(k, &pk)| {
            let ind = if k == y { 1.0 } else { 0.0 };
            w * (pk - ind) * s.delta[k]
        })
        .collect())
}

/// Gradient with respect to `(ω, l, Δ)`.
///
/// `∂ℓ/∂ω_y` is the unweighted term `LSE(z) − z_y` (also at `ω_y = 0`) and
/// zero for every other class.
pub fn cap_ce_grad_strategies(f: &[f64], y: usize, s: &StrategyVectors) -> Result<StrategyGrad> {
    check_inputs(f, y, s)?;
    let k = f.len();
    let z = adjusted_logits(f, s);
    let p = math::softmax(&z);
    let w = s.omega[y];
    let mut g = StrategyGrad::zeros(k);
    g.omega[y] = base_term(&z, y);
    for c in 0..k {
        let ind = if c == y { 1.0 } else { 0.0 };
        g.l[c] = w * (p[c] - ind);
        g.delta[c] = w * (p[c] - ind) * f[c];
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for BayesOptions {
    fn default() -> Self {
        BayesOptions {
            grad_tol: 1e-11,
            max_iter: 500,
        }
    }
}

fn expected_loss(f: &[f64], row: &[f64], s: &StrategyVectors) -> f64 {
    let z = adjusted_logits(f, s);
    let lse = math::log_sum_exp(&z);
    row.iter()
        .enumerate()
        .map(|(y, &r)| r * s.omega[y] * (lse - z[y]))
        .sum()
}

/// Minimiser of `E_{y ~ row} ℓ(f, y)` over `f` with `f_0` pinned to zero.
///
/// Damped Newton on the free coordinates with Armijo backtracking, falling
/// back to the gradient direction when the reduced Hessian is singular.
/// Stops once the free-coordinate gradient norm is at most `grad_tol`.
pub fn bayes_scores_numeric(row: &[f64], s: &StrategyVectors, opts: BayesOptions) -> Result<Vec<f64>> {
    let k = row.len();
    if k < 2 {
        return Err(Error::invalid("conditional row", "need at least two classes"));
    }
    s.validate(k)?;
    let sum: f64 = row.iter().sum();
    if row.iter().any(|&r| !(r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("conditional row", "not a probability vector"));
    }
    let total_weight: f64 = row.iter().zip(&s.omega).map(|(r, w)| r * w).sum();
    let mut f = vec![0.0; k];
    let mut gnorm = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let p = math::softmax(&adjusted_logits(&f, s));
        let grad: Vec<f64> = (0..k)
            .map(|c| s.delta[c] * (total_weight * p[c] - row[c] * s.omega[c]))
            .collect();
        gnorm = math::norm2(&grad[1..]);
        if gnorm <= opts.grad_tol {
            return Ok(f);
        }
        let n = k - 1;
        let mut h = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (i + 1, j + 1);
                let ind = if a == b { p[a] } else { 0.0 };
                h[(i, j)] = total_weight * s.delta[a] * s.delta[b] * (ind - p[a] * p[b]);
            }
        }
        let neg_grad: Vec<f64> = grad[1..].iter().map(|g| -g).collect();
        let dir = match math::solve_linear(&h, &neg_grad) {
            Some(d) if math::dot(&d, &neg_grad) > 0.0 => d,
            _ => neg_grad.clone(),
        };
        let f0 = expected_loss(&f, row, s);
        let slope = -math::dot(&dir, &neg_grad);
        let mut t = 1.0;
        let mut next = f.clone();
        loop {
            for i in 0..n {
                next[i + 1] = f[i + 1] + t * dir[i];
            }
            // Slack for rounding once the decrease is below machine precision.
            let slack = 4.0 * f64::EPSILON * f0.abs();
            if expected_loss(&next, row, s) <= f0 + 1e-4 * t * slope + slack || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        f = next;
    }
    Err(Error::NotConverged {
        what: "bayes score oracle",
        iterations: opts.max_iter,
        residual: gnorm,
    })
}

/// A prior, finitely many context rows `P(y | x)` and test-time weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteConditional {
    pub pi: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub omega_test: Vec<f64>,
}

impl DiscreteConditional {
    pub fn validate(&self) -> Result<()> {
        let k = self.pi.len();
        let is_dist = |v: &[f64]| v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if !is_dist(&self.pi) {
            return Err(Error::invalid("prior", "not a probability vector"));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "conditional row",
                    expected: k,
                    found: r.len(),
                });
            }
            if !is_dist(r) {
                return Err(Error::invalid("conditional row", alloc::format!("row {i} does not sum to 1")));
            }
        }
        attributes::weights_attribute(&self.omega_test, 0.0)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherConfig {
    /// Contexts whose target scores `ω_y P(y|x) / π_y` have a runner-up
    /// within this (relative) gap of the maximum are skipped.
    pub tie_tolerance: f64,
    pub bayes: BayesOptions,
}

impl Default for FisherConfig {
    fn default() -> Self {
        FisherConfig {
            tie_tolerance: 1e-9,
            bayes: BayesOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherContext {
    pub predicted: usize,
    pub target: usize,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherReport {
    /// One entry per context; `None` where the target argmax is tied.
    pub contexts: Vec<Option<FisherContext>>,
    pub strategies: StrategyVectors,
}

impl FisherReport {
    pub fn skipped(&self) -> usize {
        self.contexts.iter().filter(|c| c.is_none()).count()
    }

    pub fn all_matched(&self) -> bool {
        self.contexts.iter().flatten().all(|c| c.matched)
    }
}

/// Strategies of the weighted-error construction: attributes `[π, ω_test]`,
/// a single `log` basis and `w_l = [1, −1]`, so `l = log π − log ω_test`.
pub fn weighted_consistent_strategies(pi: &[f64], omega_test: &[f64]) -> Result<StrategyVectors> {
    let eps = attributes::DEFAULT_CLAMP_EPSILON;
    let table = AttributeTable::new(pi.len())
        .with(names::FREQ, pi)?
        .with(names::WEIGHTS, &attributes::weights_attribute(omega_test, eps)?)?;
    let d = cap_map::build_dictionary(&table, &BasisSet::single(BasisFunction::Log))?;
    let w = CapWeights {
        w_omega: None,
        w_l: Some(vec![1.0, -1.0]),
        w_delta: None,
    };
    cap_map::strategies_from_weights(&d, &w)
}

/// Check that the Bayes scores of the constructed loss pick the Bayes
/// decision `argmax_y ω_y P(y|x) / π_y` for every non-tied context.
pub fn fisher_consistency_check(dc: &DiscreteConditional, cfg: &FisherConfig) -> Result<FisherReport> {
    dc.validate()?;
    let s = weighted_consistent_strategies(&dc.pi, &dc.omega_test)?;
    let opts = cfg.bayes;
    let mut contexts = Vec::with_capacity(dc.rows.len());
    for row in &dc.rows {
        let target_scores: Vec<f64> = (0..row.len())
            .map(|y| dc.omega_test[y] * row[y] / dc.pi[y])
            .collect();
        let target = math::argmax(&target_scores).unwrap_or(0);
        let top = target_scores[target];
        let tied = target_scores
            .iter()
            .enumerate()
            .any(|(y, &v)| y != target && (top - v) <= cfg.tie_tolerance * top.abs().max(1.0));
        if tied {
            contexts.push(None);
            continue;
        }
        let f = bayes_scores_numeric(row, &s, opts)?;
        let predicted = math::argmax(&f).unwrap_or(0);
        contexts.push(Some(FisherContext {
            predicted,
            target,
            matched: predicted == target,
        }));
    }
    Ok(FisherReport { contexts, strategies: s })
}

/// Mean loss over a batch of logit rows, reduced pairwise in row order.
pub fn mean_cap_ce(logits: &Matrix, labels: &[usize], s: &StrategyVectors) -> Result<f64> {
    let losses: Vec<f64> = logits
        .iter_rows()
        .zip(labels)
        .map(|(f, &y)| cap_ce_loss(f, y, s))
        .collect::<Result<_>>()?;
    Ok(math::mean(&losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cap_map::la_strategies;
    use crate::cap_map::LaSign;

    fn strat(omega: &[f64], l: &[f64], delta: &[f64]) -> StrategyVectors {
        StrategyVectors {
            omega: omega.to_vec(),
            l: l.to_vec(),
            delta: delta.to_vec(),
        }
    }

    #[test]
    fn symmetric_two_class_loss_and_gradient() {
        let s = StrategyVectors::plain(2);
        let loss = cap_ce_loss(&[0.0, 0.0], 0, &s).unwrap();
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(cap_ce_grad_f(&[0.0, 0.0], 0, &s).unwrap(), vec![-0.5, 0.5]);
    }

    #[test]
    fn margin_of_ten() {
        let s = strat(&[1.0, 1.0], &[10.0, 0.0], &[1.0, 1.0]);
        let loss = cap_ce_loss(&[0.0, 0.0], 0, &s).unwrap();
        let expected = libm::log1p(libm::exp(-10.0));
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn zero_weight_annihilates_loss_and_gradients() {
        let s = strat(&[0.0, 1.0], &[0.2, -0.3], &[0.7, 0.4]);
        assert_eq!(cap_ce_loss(&[3.0, -1.0], 0, &s).unwrap(), 0.0);
        assert!(cap_ce_grad_f(&[3.0, -1.0], 0, &s).unwrap().iter().all(|&g| g == 0.0));
        let g = cap_ce_grad_strategies(&[3.0, -1.0], 0, &s).unwrap();
        let z = adjusted_logits(&[3.0, -1.0], &s);
        assert!((g.omega[0] - (math::log_sum_exp(&z) - z[0])).abs() < 1e-15);
    }

    #[test]
    fn stable_far_beyond_exp_overflow() {
        let s = StrategyVectors::plain(2);
        let loss = cap_ce_loss(&[800.0, 0.0], 1, &s).unwrap();
        assert!((loss - 800.0).abs() < 1e-9);
    }

    #[test]
    fn l_gradient_sums_to_zero_and_delta_gradient_vanishes_at_zero_logits() {
        let s = strat(&[1.3, 0.4, 2.0], &[0.2, -0.3, 1.0], &[0.7, 0.4, 0.9]);
        let g = cap_ce_grad_strategies(&[0.5, -1.5, 2.0], 1, &s).unwrap();
        assert!(g.l.iter().sum::<f64>().abs() < 1e-15);
        let g0 = cap_ce_grad_strategies(&[0.0; 3], 2, &s).unwrap();
        assert!(g0.delta.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reduces_to_softmax_cross_entropy() {
        let f = [1.0, -0.5, 0.25];
        let s = StrategyVectors::plain(3);
        let e: Vec<f64> = f.iter().map(|&x| libm::exp(x)).collect();
        let total: f64 = e.iter().sum();
        let ce = -libm::log(e[2] / total);
        assert!((cap_ce_loss(&f, 2, &s).unwrap() - ce).abs() < 1e-14);
        let g = cap_ce_grad_f(&f, 2, &s).unwrap();
        for k in 0..3 {
            let onehot = if k == 2 { 1.0 } else { 0.0 };
            assert!((g[k] - (e[k] / total - onehot)).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_shift_of_l_leaves_loss_unchanged() {
        let f = [0.3, 1.1, -0.4];
        let s = strat(&[1.0; 3], &[0.5, -0.2, 0.9], &[0.6, 0.8, 0.3]);
        let mut shifted = s.clone();
        for v in &mut shifted.l {
            *v += 7.25;
        }
        let a = cap_ce_loss(&f, 1, &s).unwrap();
        let b = cap_ce_loss(&f, 1, &shifted).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let s = StrategyVectors::plain(2);
        assert!(cap_ce_loss(&[f64::NAN, 0.0], 0, &s).is_err());
        assert!(cap_ce_loss(&[0.0, 0.0], 2, &s).is_err());
    }

    #[test]
    fn bayes_scores_recover_posterior_for_plain_ce() {
        let s = StrategyVectors::plain(2);
        let f = bayes_scores_numeric(&[0.7, 0.3], &s, BayesOptions::default()).unwrap();
        assert_eq!(f[0], 0.0);
        let p = math::softmax(&f);
        assert!((p[0] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn bayes_scores_match_grid_search_on_two_classes() {
        let s = la_strategies(&[0.8, 0.2], 1.0, LaSign::LossConsistent);
        let row = [0.35, 0.65];
        let f = bayes_scores_numeric(&row, &s, BayesOptions::default()).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        let mut x = -10.0;
        while x <= 10.0 {
            let v = expected_loss(&[0.0, x], &row, &s);
            if v < best.0 {
                best = (v, x);
            }
            x += 1e-3;
        }
        assert!((f[1] - best.1).abs() <= 1e-3);
    }

    #[test]
    fn fisher_uniform_reduces_to_posterior_argmax() {
        let dc = DiscreteConditional {
            pi: vec![1.0 / 3.0; 3],
            rows: vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]],
            omega_test: vec![1.0; 3],
        };
        let r = fisher_consistency_check(&dc, &FisherConfig::default()).unwrap();
        let targets: Vec<usize> = r.contexts.iter().flatten().map(|c| c.target).collect();
        assert_eq!(targets, vec![1, 0]);
        assert!(r.all_matched());
    }

    #[test]
    fn fisher_heavy_weight_pulls_decision_to_class_zero() {
        let dc = DiscreteConditional {
            pi: vec![0.5, 0.5],
            rows: vec![vec![0.3, 0.7], vec![0.1, 0.9]],
            omega_test: vec![1.8, 0.2],
        };
        let r = fisher_consistency_check(&dc, &FisherConfig::default()).unwrap();
        // 1.8·0.3 > 0.2·0.7 flips the first context to class 0; the second is a tie (0.18 vs 0.18)
        let c0 = r.contexts[0].as_ref().unwrap();
        assert_eq!((c0.target, c0.predicted), (0, 0));
        assert!(r.contexts[1].is_none());
    }
}
