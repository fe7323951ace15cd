use alloc::vec;
use alloc::vec::Vec;

use super::dual::Dual;
use super::model::{self, ToyModel};
use crate::cap_map::{self, CapWeights, FeatureDictionary, StrategyGrad, StrategyVectors};
use crate::domain;
use crate::math::{self, Matrix};
use crate::objectives::{self, ObjectiveSpec};
use crate::{Error, Result};

/// `T` inner heavy-ball steps on fixed batches followed by the validation
/// surrogate: the objective over per-class mean plain cross-entropy on the
/// whole validation set.
#[derive(Debug, Clone, Copy)]
pub struct UnrollProblem<'a> {
    pub train_x: &'a Matrix,
    pub train_y: &'a [usize],
    /// Rows of the `T` inner batches, in step order.
    pub batches: &'a [Vec<usize>],
    pub val_x: &'a Matrix,
    pub val_y: &'a [usize],
    pub objective: &'a ObjectiveSpec,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypergrad {
    /// Validation surrogate after the unrolled steps.
    pub value: f64,
    /// Gradient for the active weight rows; inactive rows stay `None`.
    pub grad: CapWeights,
    /// Gradient with respect to the strategy vectors.
    pub grad_strategies: StrategyGrad,
}

/// Surrogate value on the validation set and its gradient in `θ`.
pub fn validation_surrogate(
    model: &ToyModel,
    val_x: &Matrix,
    val_y: &[usize],
    objective: &ObjectiveSpec,
) -> Result<(f64, Vec<f64>)> {
    let k = model.classes;
    let counts = domain::class_counts(val_y, k);
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class });
    }
    let plain = StrategyVectors::plain(k);
    let idx: Vec<usize> = (0..val_x.rows()).collect();
    let losses = model::row_losses(model, val_x, val_y, &idx, &plain)?;
    let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (&l, &y) in losses.iter().zip(val_y) {
        by_class[y].push(l);
    }
    let per_class: Vec<f64> = by_class.iter().map(|v| math::mean(v)).collect();
    let n = val_y.len() as f64;
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let (value, g_loss) = objectives::surrogate_objective(&per_class, &priors, objective)?;
    let weights: Vec<f64> = val_y.iter().map(|&y| g_loss[y] / counts[y] as f64).collect();
    let pass = model::weighted_pass(model.kind, model.dim, k, &model.params, val_x, val_y, &idx, &weights, &plain)?;
    Ok((value, pass.grad_theta))
}

impl UnrollProblem<'_> {
    fn check(&self) -> Result<()> {
        if self.batches.is_empty() {
            return Err(Error::invalid("unroll_t", "must be at least 1"));
        }
        if self.batches.iter().any(Vec::is_empty) {
            return Err(Error::invalid("batch", "must be nonempty"));
        }
        Ok(())
    }

    /// Parameters before each step, and the model after the last one.
    fn unroll(&self, start: &ToyModel, velocity: &[f64], s: &StrategyVectors) -> Result<(Vec<Vec<f64>>, ToyModel)> {
        let mut m = start.clone();
        let mut v = velocity.to_vec();
        let mut before = Vec::with_capacity(self.batches.len());
        for batch in self.batches {
            before.push(m.params.clone());
            let g = model::forward_backward_rows(&m, self.train_x, self.train_y, batch, s)?;
            model::sgd_update(&mut m.params, &mut v, &g.grad_theta, self.lr, self.momentum, self.weight_decay);
        }
        if let Some(i) = m.params.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "unrolled parameters",
                index: i,
            });
        }
        Ok((before, m))
    }

    /// Validation surrogate after unrolling under strategies `s`.
    pub fn value_at_strategies(&self, start: &ToyModel, velocity: &[f64], s: &StrategyVectors) -> Result<f64> {
        self.check()?;
        let (_, end) = self.unroll(start, velocity, s)?;
        Ok(validation_surrogate(&end, self.val_x, self.val_y, self.objective)?.0)
    }

    /// Validation surrogate after unrolling under `S(W)`.
    pub fn value(&self, start: &ToyModel, velocity: &[f64], dict: &FeatureDictionary, w: &CapWeights) -> Result<f64> {
        let s = cap_map::strategies_from_weights(dict, w)?;
        self.value_at_strategies(start, velocity, &s)
    }

    /// Exact gradient of [`Self::value`] by reverse accumulation through the
    /// unrolled steps. Each step's Hessian-vector product and mixed strategy
    /// term come from one forward-mode pass of the manual backward pass.
    pub fn hypergrad(
        &self,
        start: &ToyModel,
        velocity: &[f64],
        dict: &FeatureDictionary,
        w: &CapWeights,
    ) -> Result<Hypergrad> {
        self.check()?;
        if velocity.len() != start.params.len() {
            return Err(Error::DimensionMismatch {
                what: "optimizer state",
                expected: start.params.len(),
                found: velocity.len(),
            });
        }
        let s = cap_map::strategies_from_weights(dict, w)?;
        let k = start.classes;
        let (before, end) = self.unroll(start, velocity, &s)?;
        let (value, g_val) = validation_surrogate(&end, self.val_x, self.val_y, self.objective)?;

        // a: adjoint of θ_t, b: adjoint of v_t.
        let mut a = g_val;
        let mut b = vec![0.0; a.len()];
        let mut hyper = StrategyGrad::zeros(k);
        for (t, batch) in self.batches.iter().enumerate().rev() {
            let bt: Vec<f64> = b.iter().zip(&a).map(|(bv, av)| bv - self.lr * av).collect();
            let theta: Vec<Dual> = before[t].iter().zip(&bt).map(|(&x, &e)| Dual::new(x, e)).collect();
            let c = vec![1.0 / batch.len() as f64; batch.len()];
            let pass = model::weighted_pass(start.kind, start.dim, k, &theta, self.train_x, self.train_y, batch, &c, &s)?;
            for ((ai, hv), &bi) in a.iter_mut().zip(&pass.grad_theta).zip(&bt) {
                *ai += hv.eps + self.weight_decay * bi;
            }
            for (bi, &bti) in b.iter_mut().zip(&bt) {
                *bi = self.momentum * bti;
            }
            for j in 0..k {
                hyper.omega[j] += pass.omega[j].eps;
                hyper.l[j] += pass.l[j].eps;
                hyper.delta[j] += pass.delta[j].eps;
            }
        }
        for v in [&hyper.omega, &hyper.l, &hyper.delta] {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "hypergradient",
                    index: i,
                });
            }
        }
        let grad = cap_map::strategies_vjp(dict, w, &hyper)?;
        Ok(Hypergrad {
            value,
            grad,
            grad_strategies: hyper,
        })
    }
}
