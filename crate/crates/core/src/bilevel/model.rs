use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dual::Scalar;
use crate::cap_map::{StrategyGrad, StrategyVectors};
use crate::math::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    /// One hidden `tanh` layer.
    Mlp1 { hidden: usize },
}

/// Parameters are flat: `linear = [W (K×d), b (K)]`,
/// `mlp1 = [W1 (h×d), b1 (h), W2 (K×h), b2 (K)]`, matrices row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub kind: ModelKind,
    pub dim: usize,
    pub classes: usize,
    pub params: Vec<f64>,
}

pub(crate) fn param_count(kind: ModelKind, d: usize, k: usize) -> usize {
    match kind {
        ModelKind::Linear => k * d + k,
        ModelKind::Mlp1 { hidden: h } => h * d + h + k * h + k,
    }
}

impl ToyModel {
    /// Weights `N(0, 1/fan_in)`, zero biases.
    pub fn new(kind: ModelKind, dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::invalid("model", "need d ≥ 1 and K ≥ 2"));
        }
        if let ModelKind::Mlp1 { hidden: 0 } = kind {
            return Err(Error::invalid("hidden", "width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |n: usize, fan_in: usize| -> Vec<f64> {
            let s = 1.0 / libm::sqrt(fan_in as f64);
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                })
                .collect()
        };
        let params = match kind {
            ModelKind::Linear => {
                let mut p = normal(classes * dim, dim);
                p.extend(vec![0.0; classes]);
                p
            }
            ModelKind::Mlp1 { hidden } => {
                let mut p = normal(hidden * dim, dim);
                p.extend(vec![0.0; hidden]);
                p.extend(normal(classes * hidden, hidden));
                p.extend(vec![0.0; classes]);
                p
            }
        };
        Ok(ToyModel {
            kind,
            dim,
            classes,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let n = param_count(self.kind, self.dim, self.classes);
        if self.params.len() != n {
            return Err(Error::DimensionMismatch {
                what: "model parameters",
                expected: n,
                found: self.params.len(),
            });
        }
        if let Some(i) = self.params.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "model parameters",
                index: i,
            });
        }
        Ok(())
    }

    /// Raw logits `f(x)` for every row.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check()?;
        check_input(x, self.dim)?;
        let mut data = Vec::with_capacity(x.rows() * self.classes);
        let mut hidden = Vec::new();
        for row in x.iter_rows() {
            let f = forward(self.kind, self.dim, self.classes, &self.params, row, &mut hidden);
            data.extend(f);
        }
        Matrix::from_vec(x.rows(), self.classes, data)
    }
}

fn check_input(x: &Matrix, d: usize) -> Result<()> {
    if x.cols() != d {
        return Err(Error::DimensionMismatch {
            what: "feature columns",
            expected: d,
            found: x.cols(),
        });
    }
    Ok(())
}

/// Logits of one row; `hidden` receives the tanh activations for `mlp1`.
fn forward<S: Scalar>(kind: ModelKind, d: usize, k: usize, p: &[S], x: &[f64], hidden: &mut Vec<S>) -> Vec<S> {
    let affine = |w: &[S], b: &[S], input: &[S], out: usize, inp: usize| -> Vec<S> {
        (0..out)
            .map(|c| {
                let mut acc = b[c];
                for j in 0..inp {
                    acc += w[c * inp + j] * input[j];
                }
                acc
            })
            .collect()
    };
    let xs: Vec<S> = x.iter().map(|&v| S::from_f64(v)).collect();
    match kind {
        ModelKind::Linear => {
            hidden.clear();
            affine(&p[..k * d], &p[k * d..], &xs, k, d)
        }
        ModelKind::Mlp1 { hidden: h } => {
            let (w1, rest) = p.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(k * h);
            *hidden = affine(w1, b1, &xs, h, d).into_iter().map(S::tanh).collect();
            affine(w2, b2, hidden, k, h)
        }
    }
}

/// Weighted loss `Σ c_i ℓ_i` and its gradients.
pub(crate) struct Pass<S> {
    pub loss: S,
    pub grad_theta: Vec<S>,
    pub omega: Vec<S>,
    pub l: Vec<S>,
    pub delta: Vec<S>,
}

/// Forward and manual backward pass over rows `idx` with per-row weights.
#[allow(clippy::too_many_arguments)]
pub(crate) fn weighted_pass<S: Scalar>(
    kind: ModelKind,
    d: usize,
    k: usize,
    p: &[S],
    x: &Matrix,
    labels: &[usize],
    idx: &[usize],
    weights: &[f64],
    s: &StrategyVectors,
) -> Result<Pass<S>> {
    let zero = S::from_f64(0.0);
    let mut out = Pass {
        loss: zero,
        grad_theta: vec![zero; p.len()],
        omega: vec![zero; k],
        l: vec![zero; k],
        delta: vec![zero; k],
    };
    let mut hidden = Vec::new();
    for (&i, &c) in idx.iter().zip(weights) {
        let row = x.row(i);
        let y = labels[i];
        let f = forward(kind, d, k, p, row, &mut hidden);
        if f.iter().any(|v| !v.value().is_finite()) {
            return Err(Error::NonFinite { what: "logits", index: i });
        }
        let z: Vec<S> = (0..k).map(|j| S::from_f64(s.l[j]) + S::from_f64(s.delta[j]) * f[j]).collect();
        let m = z.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<S> = z.iter().map(|&v| (v - S::from_f64(m)).exp()).collect();
        let mut total = zero;
        for &v in &e {
            total += v;
        }
        let base = total.ln() + S::from_f64(m) - z[y];
        let w = S::from_f64(s.omega[y]);
        let cs = S::from_f64(c);
        out.loss += cs * w * base;
        out.omega[y] += cs * base;
        let mut g_f = Vec::with_capacity(k);
        for j in 0..k {
            let ind = if j == y { 1.0 } else { 0.0 };
            let gz = cs * w * (e[j] / total - S::from_f64(ind));
            out.l[j] += gz;
            out.delta[j] += gz * f[j];
            g_f.push(gz * S::from_f64(s.delta[j]));
        }
        let g = &mut out.grad_theta;
        match kind {
            ModelKind::Linear => {
                for j in 0..k {
                    for (m_, &xv) in row.iter().enumerate() {
                        g[j * d + m_] += g_f[j] * S::from_f64(xv);
                    }
                    g[k * d + j] += g_f[j];
                }
            }
            ModelKind::Mlp1 { hidden: h } => {
                let o_b1 = h * d;
                let o_w2 = o_b1 + h;
                let o_b2 = o_w2 + k * h;
                let mut g_h = vec![zero; h];
                for j in 0..k {
                    for (t, gh) in g_h.iter_mut().enumerate() {
                        g[o_w2 + j * h + t] += g_f[j] * hidden[t];
                        *gh += g_f[j] * p[o_w2 + j * h + t];
                    }
                    g[o_b2 + j] += g_f[j];
                }
                for t in 0..h {
                    let ga = g_h[t] * (S::from_f64(1.0) - hidden[t] * hidden[t]);
                    for (m_, &xv) in row.iter().enumerate() {
                        g[t * d + m_] += ga * S::from_f64(xv);
                    }
                    g[o_b1 + t] += ga;
                }
            }
        }
    }
    Ok(out)
}

/// Per-row unweighted losses `ω_y (LSE(z) − z_y)`.
pub(crate) fn row_losses(model: &ToyModel, x: &Matrix, labels: &[usize], idx: &[usize], s: &StrategyVectors) -> Result<Vec<f64>> {
    let mut hidden = Vec::new();
    idx.iter()
        .map(|&i| {
            let f = forward(model.kind, model.dim, model.classes, &model.params, x.row(i), &mut hidden);
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "logits", index: i });
            }
            let z = crate::loss::adjusted_logits(&f, s);
            let y = labels[i];
            Ok(s.omega[y] * (crate::math::log_sum_exp(&z) - z[y]).max(0.0))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchGrad {
    pub loss: f64,
    pub grad_theta: Vec<f64>,
    /// Gradient of the mean loss with respect to `(ω, l, Δ)`.
    pub grad_strategies: StrategyGrad,
}

/// Mean CAP loss over the batch and its gradients.
pub fn forward_backward(model: &ToyModel, x: &Matrix, labels: &[usize], s: &StrategyVectors) -> Result<BatchGrad> {
    let idx: Vec<usize> = (0..x.rows()).collect();
    forward_backward_rows(model, x, labels, &idx, s)
}

pub(crate) fn forward_backward_rows(
    model: &ToyModel,
    x: &Matrix,
    labels: &[usize],
    idx: &[usize],
    s: &StrategyVectors,
) -> Result<BatchGrad> {
    model.check()?;
    check_input(x, model.dim)?;
    s.validate(model.classes)?;
    if idx.is_empty() {
        return Err(Error::invalid("batch", "must be nonempty"));
    }
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: x.rows(),
            found: labels.len(),
        });
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= model.classes) {
        return Err(Error::invalid("labels", alloc::format!("label {y} is not below K")));
    }
    let c = vec![1.0 / idx.len() as f64; idx.len()];
    let p = weighted_pass(model.kind, model.dim, model.classes, &model.params, x, labels, idx, &c, s)?;
    Ok(BatchGrad {
        loss: p.loss,
        grad_theta: p.grad_theta,
        grad_strategies: StrategyGrad {
            omega: p.omega,
            l: p.l,
            delta: p.delta,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 64,
        }
    }
}

/// Heavy-ball velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub velocity: Vec<f64>,
}

impl SgdState {
    pub fn new(n: usize) -> Self {
        SgdState { velocity: vec![0.0; n] }
    }
}

/// `v ← μ v + g + λ θ`, `θ ← θ − η v`.
pub(crate) fn sgd_update(params: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64, wd: f64) {
    for ((t, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g + wd * *t;
        *t -= lr * *v;
    }
}

/// One SGD step on the batch rows `idx`; returns the batch loss before the step.
#[allow(clippy::too_many_arguments)]
pub fn inner_step(
    model: &mut ToyModel,
    x: &Matrix,
    labels: &[usize],
    idx: &[usize],
    s: &StrategyVectors,
    state: &mut SgdState,
    cfg: &InnerConfig,
    lr: f64,
) -> Result<f64> {
    if state.velocity.len() != model.params.len() {
        return Err(Error::DimensionMismatch {
            what: "optimizer state",
            expected: model.params.len(),
            found: state.velocity.len(),
        });
    }
    let g = forward_backward_rows(model, x, labels, idx, s)?;
    sgd_update(&mut model.params, &mut state.velocity, &g.grad_theta, lr, cfg.momentum, cfg.weight_decay);
    Ok(g.loss)
}
