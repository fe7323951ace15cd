//! Two-class Gaussian mixture with a cost-sensitive hard-margin SVM.
//!
//! Class `+1` (label 0, the minority, probability `π`) is drawn from
//! `N(μ, σ₊² I)` and class `−1` (label 1) from `N(−μ, σ₋² I)`. The CS-SVM
//! requires margin `δ` on the minority and `1` on the majority:
//!
//! ```text
//! min ‖w‖²/2  s.t.  y_i (x_iᵀw + b) ≥ m_i,   m_i = δ if y_i = +1 else 1
//! ```
//!
//! and is solved in the dual by pairwise coordinate ascent.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::LabeledDataset;
use crate::math::{self, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub mu: Vec<f64>,
    /// Standard deviation of the minority (`+1`) class.
    pub sigma_plus: f64,
    /// Standard deviation of the majority (`−1`) class.
    pub sigma_minus: f64,
    pub pi: f64,
    pub n: usize,
}

impl GmmSpec {
    /// `μ = ‖μ‖ e_1` in `d` dimensions.
    pub fn isotropic(mu_norm: f64, d: usize, sigma_plus: f64, sigma_minus: f64, pi: f64, n: usize) -> Self {
        let mut mu = vec![0.0; d];
        if d > 0 {
            mu[0] = mu_norm;
        }
        GmmSpec {
            mu,
            sigma_plus,
            sigma_minus,
            pi,
            n,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() || self.n == 0 {
            return Err(Error::invalid("gmm", "dimension and sample size must be positive"));
        }
        if !(math::norm2(&self.mu) > 0.0) {
            return Err(Error::invalid("mu", "must be nonzero"));
        }
        if !(self.sigma_plus > 0.0 && self.sigma_minus > 0.0) {
            return Err(Error::invalid("sigma", "standard deviations must be positive"));
        }
        if !(self.pi > 0.0 && self.pi <= 0.5) {
            return Err(Error::invalid("pi", "minority probability must lie in (0, 0.5]"));
        }
        Ok(())
    }
}

/// `+1 → label 0`, `−1 → label 1`.
pub fn signs(labels: &[usize]) -> Vec<f64> {
    labels.iter().map(|&y| if y == 0 { 1.0 } else { -1.0 }).collect()
}

pub fn sample_gmm(spec: &GmmSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let d = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(spec.n * d);
    let mut labels = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let plus = rng.random::<f64>() < spec.pi;
        let (sign, sigma) = if plus {
            (1.0, spec.sigma_plus)
        } else {
            (-1.0, spec.sigma_minus)
        };
        for &m in &spec.mu {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(sign * m + sigma * z);
        }
        labels.push(if plus { 0 } else { 1 });
    }
    LabeledDataset::new(Matrix::from_vec(spec.n, d, data)?, labels, 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsSvmSolution {
    pub w: Vec<f64>,
    pub b: f64,
    pub duals: Vec<f64>,
    /// `‖w‖² / 2`.
    pub objective: f64,
    /// Maximal KKT violation of the dual at exit.
    pub max_violation: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            tol: 1e-10,
            max_iter: 1_000_000,
        }
    }
}

const TAU: f64 = 1e-14;

/// Solve the CS-SVM dual
/// `max Σ m_i α_i − ½‖Σ α_i y_i x_i‖²` s.t. `α ≥ 0`, `Σ α_i y_i = 0`.
///
/// Each iteration moves the maximal violating pair (second-order working
/// set selection) along the equality constraint. Stops when the gap between
/// `max_{I_up} −y_t G_t` and `min_{I_low} −y_t G_t` is at most `tol`.
/// Non-separable inputs have an unbounded dual and exhaust `max_iter`.
pub fn solve_cssvm(x: &Matrix, y: &[f64], delta: f64, opts: SvmOptions) -> Result<CsSvmSolution> {
    let n = x.rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "svm labels",
            expected: n,
            found: y.len(),
        });
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid("svm labels", "must be +1 or -1"));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::invalid("svm labels", "both classes must be present"));
    }
    let margin: Vec<f64> = y.iter().map(|&v| if v > 0.0 { delta } else { 1.0 }).collect();
    let mut gram = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = math::dot(x.row(i), x.row(j));
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let mut alpha = vec![0.0; n];
    let mut grad: Vec<f64> = margin.iter().map(|m| -m).collect();
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        // I_up: can increase y_t α_t;  I_low: can decrease it.
        let in_up = |t: usize, a: &[f64]| y[t] > 0.0 || a[t] > 0.0;
        let in_low = |t: usize, a: &[f64]| y[t] < 0.0 || a[t] > 0.0;
        let mut i = usize::MAX;
        let mut m_max = f64::NEG_INFINITY;
        for t in 0..n {
            if in_up(t, &alpha) {
                let v = -y[t] * grad[t];
                if v > m_max {
                    m_max = v;
                    i = t;
                }
            }
        }
        let mut j = usize::MAX;
        let mut m_min = f64::INFINITY;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(t, &alpha) {
                continue;
            }
            let v = -y[t] * grad[t];
            m_min = m_min.min(v);
            let b = m_max - v;
            if b > 0.0 {
                let a = (gram[(i, i)] + gram[(t, t)] - 2.0 * gram[(i, t)]).max(TAU);
                let score = -b * b / a;
                if score < best {
                    best = score;
                    j = t;
                }
            }
        }
        gap = m_max - m_min;
        if gap <= opts.tol || j == usize::MAX {
            break;
        }
        iterations += 1;
        let quad = (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(TAU);
        let mut step = (m_max + y[j] * grad[j]) / quad;
        // α_i ← α_i + y_i t,  α_j ← α_j − y_j t
        if y[i] < 0.0 {
            step = step.min(alpha[i]);
        }
        if y[j] > 0.0 {
            step = step.min(alpha[j]);
        }
        alpha[i] += y[i] * step;
        alpha[j] -= y[j] * step;
        if y[i] < 0.0 && alpha[i] < 0.0 {
            alpha[i] = 0.0;
        }
        if y[j] > 0.0 && alpha[j] < 0.0 {
            alpha[j] = 0.0;
        }
        for s in 0..n {
            grad[s] += step * y[s] * (gram[(s, i)] - gram[(s, j)]);
        }
    }
    if gap > opts.tol {
        return Err(Error::NotConverged {
            what: "cs-svm dual",
            iterations,
            residual: gap,
        });
    }
    let mut w = vec![0.0; x.cols()];
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            for (wj, &xj) in w.iter_mut().zip(x.row(i)) {
                *wj += a * y[i] * xj;
            }
        }
    }
    let free: Vec<f64> = (0..n).filter(|&t| alpha[t] > 0.0).map(|t| -y[t] * grad[t]).collect();
    let b = if free.is_empty() { 0.0 } else { math::mean(&free) };
    let objective = 0.5 * math::dot(&w, &w);
    Ok(CsSvmSolution {
        w,
        b,
        duals: alpha,
        objective,
        max_violation: gap,
        iterations,
    })
}

/// Residuals of the CS-SVM optimality conditions at a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `max_i max(0, m_i − y_i(x_iᵀw + b))`.
    pub primal: f64,
    /// `max_i max(0, −α_i)`.
    pub dual: f64,
    /// `|Σ α_i y_i|`.
    pub balance: f64,
    /// `max_i α_i |y_i(x_iᵀw + b) − m_i|`.
    pub complementary: f64,
    /// `‖w − Σ α_i y_i x_i‖_∞`.
    pub stationarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.dual)
            .max(self.balance)
            .max(self.complementary)
            .max(self.stationarity)
    }
}

pub fn kkt_report(x: &Matrix, y: &[f64], delta: f64, sol: &CsSvmSolution) -> KktReport {
    let mut r = KktReport {
        primal: 0.0,
        dual: 0.0,
        balance: 0.0,
        complementary: 0.0,
        stationarity: 0.0,
    };
    let mut w = vec![0.0; x.cols()];
    let mut bal = 0.0;
    for i in 0..x.rows() {
        let m = if y[i] > 0.0 { delta } else { 1.0 };
        let fx = y[i] * (math::dot(x.row(i), &sol.w) + sol.b);
        r.primal = r.primal.max(m - fx);
        r.dual = r.dual.max(-sol.duals[i]);
        r.complementary = r.complementary.max(sol.duals[i] * (fx - m).abs());
        bal += sol.duals[i] * y[i];
        for (wj, &xj) in w.iter_mut().zip(x.row(i)) {
            *wj += sol.duals[i] * y[i] * xj;
        }
    }
    r.balance = bal.abs();
    r.stationarity = w
        .iter()
        .zip(&sol.w)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancedError {
    pub rbal: f64,
    pub err_plus: f64,
    pub err_minus: f64,
}

/// Exact population error of `sign(xᵀw + b)` under the mixture:
/// `Err₊ = Φ(−(μᵀw + b)/(σ₊‖w‖))`, `Err₋ = Φ((b − μᵀw)/(σ₋‖w‖))`.
pub fn analytic_balanced_error(w: &[f64], b: f64, spec: &GmmSpec) -> Result<BalancedError> {
    if w.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            what: "classifier",
            expected: spec.dim(),
            found: w.len(),
        });
    }
    let nw = math::norm2(w);
    if !(nw > 0.0) {
        return Err(Error::invalid("w", "classifier direction is zero"));
    }
    let mw = math::dot(&spec.mu, w);
    let err_plus = math::normal_cdf(-(mw + b) / (spec.sigma_plus * nw));
    let err_minus = math::normal_cdf((b - mw) / (spec.sigma_minus * nw));
    Ok(BalancedError {
        rbal: 0.5 * (err_plus + err_minus),
        err_plus,
        err_minus,
    })
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_spaced_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (libm::log(lo), libm::log(hi));
    (0..n)
        .map(|i| libm::exp(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// The default δ grid: 30 log-spaced points in `[0.5, 8]`.
pub fn default_delta_grid() -> Vec<f64> {
    log_spaced_grid(0.5, 8.0, 30)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub rbal_mean: f64,
    pub rbal_sd: f64,
    /// Seeds whose solve succeeded for this δ.
    pub seeds_ok: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSweep {
    pub rows: Vec<SweepRow>,
    pub delta_star: f64,
    /// `(seed, delta)` cells dropped because the solver failed.
    pub failures: Vec<(u64, f64)>,
}

/// Balanced error of the CS-SVM for every δ on one seeded sample.
/// A failed solve yields `None` for that cell.
pub fn sweep_seed(spec: &GmmSpec, grid: &[f64], seed: u64, opts: SvmOptions) -> Result<Vec<Option<f64>>> {
    let ds = sample_gmm(spec, seed)?;
    let y = signs(ds.labels());
    Ok(grid
        .iter()
        .map(|&delta| {
            solve_cssvm(ds.features(), &y, delta, opts)
                .and_then(|sol| analytic_balanced_error(&sol.w, sol.b, spec))
                .ok()
                .map(|e| e.rbal)
        })
        .collect())
}

/// Average per-seed curves; `δ*` is the first grid point with the smallest
/// mean balanced error.
pub fn aggregate_sweep(grid: &[f64], seeds: &[u64], per_seed: &[Vec<Option<f64>>]) -> Result<DeltaSweep> {
    let mut rows = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for (g, &delta) in grid.iter().enumerate() {
        let mut vals = Vec::new();
        for (s, curve) in per_seed.iter().enumerate() {
            match curve[g] {
                Some(v) => vals.push(v),
                None => failures.push((seeds[s], delta)),
            }
        }
        let (mean, sd) = if vals.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (math::mean(&vals), math::population_sd(&vals))
        };
        rows.push(SweepRow {
            delta,
            rbal_mean: mean,
            rbal_sd: sd,
            seeds_ok: vals.len(),
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.rbal_mean.is_finite())
        .min_by(|a, b| a.1.rbal_mean.total_cmp(&b.1.rbal_mean).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .ok_or(Error::NotConverged {
            what: "delta sweep",
            iterations: 0,
            residual: f64::NAN,
        })?;
    Ok(DeltaSweep {
        delta_star: rows[best].delta,
        rows,
        failures,
    })
}

pub fn delta_sweep(spec: &GmmSpec, grid: &[f64], seeds: &[u64], opts: SvmOptions) -> Result<DeltaSweep> {
    if grid.len() < 3 {
        return Err(Error::invalid("delta grid", "need at least three points"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("delta grid", "must be strictly increasing"));
    }
    let per_seed = seeds
        .iter()
        .map(|&s| sweep_seed(spec, grid, s, opts))
        .collect::<Result<Vec<_>>>()?;
    aggregate_sweep(grid, seeds, &per_seed)
}
