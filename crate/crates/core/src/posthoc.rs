//! Post-hoc adjustment of frozen logits, `ô = Δ ⊙ o − l`, with `(l, Δ)`
//! produced by CAP weights fitted on validation logits.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attributes::AttributeTable;
use crate::cap_map::{
    self, ActiveRows, BasisFunction, BasisSet, CapWeights, FeatureDictionary, StrategyGrad, StrategyVectors,
};
use crate::domain::{self, LogitMatrix};
use crate::math::{self, Matrix};
use crate::objectives::{self, ObjectiveSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PosthocMode {
    /// `ô = o − l`.
    #[serde(rename = "l")]
    Additive,
    /// `ô = Δ ⊙ o`.
    #[serde(rename = "delta")]
    Multiplicative,
    /// `ô = Δ ⊙ o − l`.
    #[serde(rename = "both")]
    Both,
}

impl PosthocMode {
    pub fn active_rows(self) -> ActiveRows {
        match self {
            PosthocMode::Additive => ActiveRows::L_ONLY,
            PosthocMode::Multiplicative => ActiveRows::DELTA_ONLY,
            PosthocMode::Both => ActiveRows::L_AND_DELTA,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosthocConfig {
    pub mode: PosthocMode,
    pub steps: usize,
    pub learning_rate: f64,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub best_iterate_tracking: bool,
}

impl PosthocConfig {
    /// Gradient descent at `lr = 0.05` for 500 steps.
    pub fn new(mode: PosthocMode, objective: ObjectiveSpec) -> Self {
        PosthocConfig {
            mode,
            steps: 500,
            learning_rate: 0.05,
            objective,
            seed: 0,
            best_iterate_tracking: true,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        self.objective.validate(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosthocModel {
    pub mode: PosthocMode,
    pub cap_weights: CapWeights,
    pub dictionary: FeatureDictionary,
    pub strategies: StrategyVectors,
    /// True objective before each step; the last entry follows the final step.
    pub history: Vec<f64>,
    /// Index into `history` of the returned iterate.
    pub best_step: usize,
    pub initial_objective: f64,
    pub objective: f64,
}

/// Apply the adjustment selected by `mode`; the unused part of `s` is ignored.
pub fn adjust_logits(o: &LogitMatrix, s: &StrategyVectors, mode: PosthocMode) -> Result<LogitMatrix> {
    let k = o.num_classes();
    s.validate(k)?;
    let use_l = mode != PosthocMode::Multiplicative;
    let use_delta = mode != PosthocMode::Additive;
    let values = adjust_values(o.values(), s, use_l, use_delta);
    LogitMatrix::new(values, o.labels().map(<[usize]>::to_vec))
}

fn adjust_values(o: &Matrix, s: &StrategyVectors, use_l: bool, use_delta: bool) -> Matrix {
    let k = o.cols();
    let mut data = Vec::with_capacity(o.rows() * k);
    for row in o.iter_rows() {
        for c in 0..k {
            let scaled = if use_delta { s.delta[c] * row[c] } else { row[c] };
            data.push(if use_l { scaled - s.l[c] } else { scaled });
        }
    }
    Matrix::from_vec(o.rows(), k, data).expect("shape preserved")
}

fn true_objective(values: &Matrix, labels: &[usize], spec: &ObjectiveSpec) -> Result<f64> {
    let preds = domain::predict_rows(values)?;
    let errs = domain::class_conditional_errors(&preds, labels, values.cols())?;
    objectives::eval_objective(&errs, errs.plain_error(), spec)
}

fn check_validation(o: &LogitMatrix) -> Result<(&[usize], Vec<usize>)> {
    let labels = o.require_labels()?;
    let counts = domain::class_counts(labels, o.num_classes());
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class });
    }
    Ok((labels, counts))
}

/// Surrogate value and its gradient with respect to the weight rows.
fn surrogate_step(
    o: &Matrix,
    labels: &[usize],
    counts: &[usize],
    priors: &[f64],
    dict: &FeatureDictionary,
    w: &CapWeights,
    spec: &ObjectiveSpec,
) -> Result<(f64, CapWeights)> {
    let k = o.cols();
    let s = cap_map::strategies_from_weights(dict, w)?;
    let rows = w.active_rows();
    let adjusted = adjust_values(o, &s, rows.l, rows.delta);
    let mut per_sample = Vec::with_capacity(o.rows());
    let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (row, &y) in adjusted.iter_rows().zip(labels) {
        let ce = (math::log_sum_exp(row) - row[y]).max(0.0);
        by_class[y].push(ce);
        per_sample.push(math::softmax(row));
    }
    let losses: Vec<f64> = by_class.iter().map(|v| math::mean(v)).collect();
    let (value, g_loss) = objectives::surrogate_objective(&losses, priors, spec)?;
    let mut g = StrategyGrad::zeros(k);
    for ((p, &y), raw) in per_sample.iter().zip(labels).zip(o.iter_rows()) {
        let c = g_loss[y] / counts[y] as f64;
        for j in 0..k {
            let ind = if j == y { 1.0 } else { 0.0 };
            let g_adj = c * (p[j] - ind);
            g.l[j] -= g_adj;
            g.delta[j] += g_adj * raw[j];
        }
    }
    Ok((value, cap_map::strategies_vjp(dict, w, &g)?))
}

fn initial_weights(dict: &FeatureDictionary, mode: PosthocMode) -> CapWeights {
    let mut w = CapWeights::zeros(dict.num_features(), mode.active_rows());
    if w.w_delta.is_some() {
        w.w_delta = Some(cap_map::uniform_delta_init(dict));
    }
    w
}

/// Gradient descent on the active weight rows against the surrogate of the
/// per-class mean softmax cross-entropy of the adjusted logits.
///
/// The true objective is evaluated before every step. The identity
/// adjustment is the reference point: with tracking on, the returned iterate
/// is the best among the identity and all visited iterates.
pub fn fit_posthoc(
    val_logits: &LogitMatrix,
    attrs: &AttributeTable,
    basis: &BasisSet,
    cfg: &PosthocConfig,
) -> Result<PosthocModel> {
    let k = val_logits.num_classes();
    cfg.validate(k)?;
    let dict = cap_map::build_dictionary(attrs, basis)?;
    fit_with_dictionary(val_logits, dict, cfg)
}

pub fn fit_with_dictionary(val_logits: &LogitMatrix, dict: FeatureDictionary, cfg: &PosthocConfig) -> Result<PosthocModel> {
    let k = val_logits.num_classes();
    cfg.validate(k)?;
    if dict.num_classes() != k {
        return Err(Error::DimensionMismatch {
            what: "dictionary rows",
            expected: k,
            found: dict.num_classes(),
        });
    }
    let (labels, counts) = check_validation(val_logits)?;
    let n = labels.len() as f64;
    let priors: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let o = val_logits.values();

    let initial_objective = true_objective(o, labels, &cfg.objective)?;
    let mut w = initial_weights(&dict, cfg.mode);
    let mut flat = w.to_flat();
    let mut history = Vec::with_capacity(cfg.steps + 1);
    let mut best: Option<(f64, usize, CapWeights)> = None;
    for step in 0..=cfg.steps {
        let s = cap_map::strategies_from_weights(&dict, &w)?;
        let rows = w.active_rows();
        let value = true_objective(&adjust_values(o, &s, rows.l, rows.delta), labels, &cfg.objective)?;
        history.push(value);
        if best.as_ref().is_none_or(|(b, _, _)| value < *b) {
            best = Some((value, step, w.clone()));
        }
        if step == cfg.steps {
            break;
        }
        let (_, grad) = surrogate_step(o, labels, &counts, &priors, &dict, &w, &cfg.objective)?;
        let g = grad.to_flat();
        for (x, gi) in flat.iter_mut().zip(&g) {
            *x -= cfg.learning_rate * gi;
        }
        if let Some(i) = flat.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "post-hoc weights",
                index: i,
            });
        }
        w.set_flat(&flat)?;
    }

    let (objective, best_step, chosen) = if cfg.best_iterate_tracking {
        let (b, step, bw) = best.expect("at least one iterate");
        if initial_objective <= b {
            // Exact identity: `w_l = 0` with the delta row switched off.
            let mut id = CapWeights::zeros(dict.num_features(), cfg.mode.active_rows());
            id.w_delta = None;
            (initial_objective, 0, id)
        } else {
            (b, step, bw)
        }
    } else {
        (*history.last().expect("nonempty"), cfg.steps, w)
    };
    let strategies = neutral_inactive(cap_map::strategies_from_weights(&dict, &chosen)?, cfg.mode);
    Ok(PosthocModel {
        mode: cfg.mode,
        cap_weights: chosen,
        dictionary: dict,
        strategies,
        history,
        best_step,
        initial_objective,
        objective,
    })
}

fn neutral_inactive(mut s: StrategyVectors, mode: PosthocMode) -> StrategyVectors {
    let k = s.num_classes();
    if mode == PosthocMode::Multiplicative {
        s.l = vec![0.0; k];
    }
    if mode == PosthocMode::Additive {
        s.delta = vec![1.0; k];
    }
    s
}

/// Per-class free parameters: identity attributes with the identity basis.
pub fn plain_posthoc_baseline(val_logits: &LogitMatrix, cfg: &PosthocConfig) -> Result<PosthocModel> {
    let k = val_logits.num_classes();
    let attrs = AttributeTable::new(k).with_identity()?;
    fit_posthoc(val_logits, &attrs, &BasisSet::single(BasisFunction::Identity), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaPosthocResult {
    pub tau: f64,
    pub objective: f64,
    /// `(τ, objective)` for every grid point.
    pub grid: Vec<(f64, f64)>,
    pub strategies: StrategyVectors,
}

/// `{0, 0.05, …, 3}`.
pub fn default_temperature_grid() -> Vec<f64> {
    (0..=60).map(|i| i as f64 * 0.05).collect()
}

/// Grid search over `ô = o − τ log π`; ties go to the smallest `τ`.
pub fn la_posthoc_baseline(
    val_logits: &LogitMatrix,
    pi: &[f64],
    temperature_grid: &[f64],
    objective: &ObjectiveSpec,
) -> Result<LaPosthocResult> {
    let k = val_logits.num_classes();
    if temperature_grid.is_empty() {
        return Err(Error::invalid("temperature grid", "must be nonempty"));
    }
    if pi.len() != k {
        return Err(Error::DimensionMismatch {
            what: "class priors",
            expected: k,
            found: pi.len(),
        });
    }
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::invalid("class priors", "must be positive"));
    }
    objective.validate(k)?;
    let labels = val_logits.require_labels()?;
    let mut grid = Vec::with_capacity(temperature_grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &tau in temperature_grid {
        let s = cap_map::la_strategies(pi, tau, cap_map::LaSign::LossConsistent);
        let v = true_objective(&adjust_values(val_logits.values(), &s, true, false), labels, objective)?;
        grid.push((tau, v));
        let better = match best {
            None => true,
            Some((bt, bv)) => v < bv || (v == bv && tau < bt),
        };
        if better {
            best = Some((tau, v));
        }
    }
    let (tau, objective) = best.expect("nonempty grid");
    Ok(LaPosthocResult {
        tau,
        objective,
        grid,
        strategies: cap_map::la_strategies(pi, tau, cap_map::LaSign::LossConsistent),
    })
}

/// Loss strategies for retraining: `ω = 1` with the fitted `l` and `Δ`.
/// The post-hoc subtraction `l` is used as the additive loss term unchanged.
pub fn export_strategies(model: &PosthocModel) -> StrategyVectors {
    let mut s = model.strategies.clone();
    s.omega = vec![1.0; s.num_classes()];
    s
}
