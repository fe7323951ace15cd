use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hypergrad::UnrollProblem;
use super::model::{self, InnerConfig, ModelKind, SgdState, ToyModel};
use crate::attributes::{self, names, AttributeTable};
use crate::cap_map::{self, ActiveRows, BasisFunction, BasisSet, CapWeights, FeatureDictionary, StrategyVectors};
use crate::domain::{self, LabeledDataset};
use crate::objectives::{self, MetricReport, ObjectiveSpec};
use crate::{Error, Result};

/// Batch losses above this, or non-finite, abort training.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        OuterConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub epochs: Vec<usize>,
    pub factor: f64,
}

impl Default for LrDecay {
    fn default() -> Self {
        LrDecay {
            epochs: vec![20, 25],
            factor: 0.1,
        }
    }
}

impl LrDecay {
    /// Inner learning rate in effect during `epoch`.
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        let n = self.epochs.iter().filter(|&&e| e <= epoch).count();
        let mut lr = base;
        for _ in 0..n {
            lr *= self.factor;
        }
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributeSet {
    #[serde(rename = "freq")]
    Freq,
    #[serde(rename = "diff")]
    Diff,
    #[serde(rename = "freq+diff")]
    FreqDiff,
    #[serde(rename = "identity")]
    Identity,
}

impl AttributeSet {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "freq" => Some(AttributeSet::Freq),
            "diff" => Some(AttributeSet::Diff),
            "freq+diff" => Some(AttributeSet::FreqDiff),
            "identity" => Some(AttributeSet::Identity),
            _ => None,
        }
    }

    fn uses_diff(self) -> bool {
        matches!(self, AttributeSet::Diff | AttributeSet::FreqDiff)
    }
}

fn default_rows() -> ActiveRows {
    ActiveRows::L_AND_DELTA
}

fn default_unroll() -> usize {
    1
}

fn default_val_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilevelConfig {
    pub model: ModelKind,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    #[serde(default)]
    pub inner: InnerConfig,
    #[serde(default)]
    pub outer: OuterConfig,
    #[serde(default = "default_unroll")]
    pub unroll_t: usize,
    #[serde(default)]
    pub lr_decay: LrDecay,
    #[serde(default = "default_rows")]
    pub rows: ActiveRows,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Start `w_l` at `γ log π` through the `freq:log` feature instead of zero.
    #[serde(default)]
    pub la_init: Option<f64>,
    pub seed: u64,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        BilevelConfig {
            model: ModelKind::Linear,
            warmup_epochs: 2,
            total_epochs: 30,
            inner: InnerConfig::default(),
            outer: OuterConfig::default(),
            unroll_t: 1,
            lr_decay: LrDecay::default(),
            rows: ActiveRows::L_AND_DELTA,
            val_fraction: 0.2,
            la_init: None,
            seed: 0,
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::invalid("warmup_epochs", "must not exceed total_epochs"));
        }
        if self.unroll_t == 0 {
            return Err(Error::invalid("unroll_t", "must be at least 1"));
        }
        if self.inner.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        for (name, v) in [
            ("inner.lr", self.inner.lr),
            ("inner.momentum", self.inner.momentum),
            ("inner.weight_decay", self.inner.weight_decay),
            ("outer.lr", self.outer.lr),
            ("outer.momentum", self.outer.momentum),
            ("outer.weight_decay", self.outer.weight_decay),
            ("lr_decay.factor", self.lr_decay.factor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be finite and nonnegative"));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid("val_fraction", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub train_loss: f64,
    /// True objective of the model on the validation split.
    pub val_objective: f64,
    pub val_balanced: f64,
    /// Whether outer updates ran during this epoch.
    pub search: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub cap_weights: CapWeights,
    pub dictionary: FeatureDictionary,
    pub attributes: Vec<String>,
    pub strategies: StrategyVectors,
    pub trace: Vec<EpochTrace>,
    /// Epoch whose end-of-epoch weights were kept.
    pub best_epoch: usize,
}

fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn check_loss(loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(Error::Diverged { epoch, loss });
    }
    Ok(())
}

fn evaluate(model: &ToyModel, ds: &LabeledDataset, objective: &ObjectiveSpec) -> Result<(f64, f64)> {
    let logits = model.logits(ds.features())?;
    let preds = domain::predict_rows(&logits)?;
    let errs = domain::class_conditional_errors(&preds, ds.labels(), ds.num_classes())?;
    let v = objectives::eval_objective(&errs, errs.plain_error(), objective)?;
    let b = objectives::eval_objective(&errs, errs.plain_error(), &ObjectiveSpec::Balanced)?;
    Ok((v, b))
}

/// Test metrics of `model` on `ds`.
pub fn test_metrics(model: &ToyModel, ds: &LabeledDataset, weights: Option<&[f64]>) -> Result<MetricReport> {
    let logits = model.logits(ds.features())?;
    let preds = domain::predict_rows(&logits)?;
    let errs = domain::class_conditional_errors(&preds, ds.labels(), ds.num_classes())?;
    objectives::metric_report(&errs, weights)
}

fn build_attributes(
    set: AttributeSet,
    train: &LabeledDataset,
    val: &LabeledDataset,
    model: &ToyModel,
    basis: &BasisSet,
) -> Result<(AttributeTable, BasisSet)> {
    let k = train.num_classes();
    if set == AttributeSet::Identity {
        let t = AttributeTable::new(k).with_identity()?;
        return Ok((t, BasisSet::single(BasisFunction::Identity)));
    }
    let mut t = AttributeTable::new(k);
    if matches!(set, AttributeSet::Freq | AttributeSet::FreqDiff) {
        t.push(names::FREQ, &attributes::freq_from_counts(&train.class_counts())?)?;
    }
    if set.uses_diff() {
        let logits = model.logits(val.features())?;
        let preds = domain::predict_rows(&logits)?;
        let errs = domain::class_conditional_errors(&preds, val.labels(), k)?;
        t.push(names::DIFF, &attributes::diff_from_errors(&errs, t.clamp_epsilon())?)?;
    }
    Ok((t, basis.clone()))
}

fn initial_weights(dict: &FeatureDictionary, cfg: &BilevelConfig) -> Result<CapWeights> {
    let mut w = CapWeights::zeros(dict.num_features(), cfg.rows);
    if w.w_delta.is_some() {
        w.w_delta = Some(cap_map::uniform_delta_init(dict));
    }
    if let Some(gamma) = cfg.la_init {
        let col = dict
            .column_labels()
            .iter()
            .position(|c| c == "freq:log")
            .ok_or_else(|| Error::invalid("la_init", "needs the freq attribute with the log basis"))?;
        match w.w_l.as_mut() {
            Some(row) => row[col] = gamma,
            None => return Err(Error::invalid("la_init", "the l row is not active")),
        }
    }
    Ok(w)
}

/// Bilevel search of CAP weights.
///
/// Warmup epochs train `θ` under the initial strategies only. At the end of
/// warmup the attributes are built (difficulty measured on `val`), then every
/// batch performs one outer update of `W` by the unrolled hypergradient
/// followed by one inner step. The inner learning-rate decay schedule
/// applies to the inner optimiser only. The kept `W` is the end-of-epoch
/// iterate with the lowest validation objective, the initial `W` included.
pub fn search_phase(
    train: &LabeledDataset,
    val: &LabeledDataset,
    attrs: AttributeSet,
    basis: &BasisSet,
    objective: &ObjectiveSpec,
    cfg: &BilevelConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    let k = train.num_classes();
    objective.validate(k)?;
    if val.num_classes() != k {
        return Err(Error::DimensionMismatch {
            what: "validation classes",
            expected: k,
            found: val.num_classes(),
        });
    }
    if let Some(class) = val.class_counts().iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ToyModel::new(cfg.model, train.dim(), k, cfg.seed)?;
    let mut state = SgdState::new(model.num_params());
    let mut trace = Vec::with_capacity(cfg.total_epochs);
    let plain = StrategyVectors::plain(k);
    let (x, y) = (train.features(), train.labels());

    for epoch in 0..cfg.warmup_epochs {
        let lr = cfg.lr_decay.lr_at(cfg.inner.lr, epoch);
        let mut losses = Vec::new();
        for batch in epoch_batches(train.len(), cfg.inner.batch_size, &mut rng) {
            let loss = model::inner_step(&mut model, x, y, &batch, &plain, &mut state, &cfg.inner, lr)?;
            check_loss(loss, epoch)?;
            losses.push(loss);
        }
        let (v, b) = evaluate(&model, val, objective)?;
        trace.push(EpochTrace {
            epoch,
            train_loss: crate::math::mean(&losses),
            val_objective: v,
            val_balanced: b,
            search: false,
        });
    }

    let (table, basis) = build_attributes(attrs, train, val, &model, basis)?;
    let dict = cap_map::build_dictionary(&table, &basis)?;
    let mut w = initial_weights(&dict, cfg)?;
    let mut w_flat = w.to_flat();
    let mut w_velocity = vec![0.0; w_flat.len()];
    let mut best = (f64::INFINITY, cfg.warmup_epochs.saturating_sub(1), w.clone());
    if cfg.warmup_epochs > 0 {
        best.0 = trace.last().map_or(f64::INFINITY, |t: &EpochTrace| t.val_objective);
    }

    for epoch in cfg.warmup_epochs..cfg.total_epochs {
        let lr = cfg.lr_decay.lr_at(cfg.inner.lr, epoch);
        let batches = epoch_batches(train.len(), cfg.inner.batch_size, &mut rng);
        let mut losses = Vec::with_capacity(batches.len());
        for (bi, batch) in batches.iter().enumerate() {
            let unrolled: Vec<Vec<usize>> = (0..cfg.unroll_t)
                .map(|t| batches[(bi + t) % batches.len()].clone())
                .collect();
            let problem = UnrollProblem {
                train_x: x,
                train_y: y,
                batches: &unrolled,
                val_x: val.features(),
                val_y: val.labels(),
                objective,
                lr,
                momentum: cfg.inner.momentum,
                weight_decay: cfg.inner.weight_decay,
            };
            let hg = problem.hypergrad(&model, &state.velocity, &dict, &w)?;
            let g = hg.grad.to_flat();
            model::sgd_update(
                &mut w_flat,
                &mut w_velocity,
                &g,
                cfg.outer.lr,
                cfg.outer.momentum,
                cfg.outer.weight_decay,
            );
            if let Some(i) = w_flat.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "cap weights",
                    index: i,
                });
            }
            w.set_flat(&w_flat)?;
            let s = cap_map::strategies_from_weights(&dict, &w)?;
            let loss = model::inner_step(&mut model, x, y, batch, &s, &mut state, &cfg.inner, lr)?;
            check_loss(loss, epoch)?;
            losses.push(loss);
        }
        let (v, b) = evaluate(&model, val, objective)?;
        trace.push(EpochTrace {
            epoch,
            train_loss: crate::math::mean(&losses),
            val_objective: v,
            val_balanced: b,
            search: true,
        });
        if v < best.0 {
            best = (v, epoch, w.clone());
        }
    }

    let (_, best_epoch, cap_weights) = best;
    let strategies = cap_map::strategies_from_weights(&dict, &cap_weights)?;
    Ok(SearchResult {
        cap_weights,
        attributes: table.names().to_vec(),
        dictionary: dict,
        strategies,
        trace,
        best_epoch,
    })
}

/// Train a fresh model for `total_epochs` under fixed strategies; returns the
/// model and its per-epoch mean training loss.
pub fn retrain(data: &LabeledDataset, s: &StrategyVectors, cfg: &BilevelConfig) -> Result<(ToyModel, Vec<f64>)> {
    cfg.validate()?;
    s.validate(data.num_classes())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ToyModel::new(cfg.model, data.dim(), data.num_classes(), cfg.seed)?;
    let mut state = SgdState::new(model.num_params());
    let mut curve = Vec::with_capacity(cfg.total_epochs);
    for epoch in 0..cfg.total_epochs {
        let lr = cfg.lr_decay.lr_at(cfg.inner.lr, epoch);
        let mut losses = Vec::new();
        for batch in epoch_batches(data.len(), cfg.inner.batch_size, &mut rng) {
            let loss = model::inner_step(&mut model, data.features(), data.labels(), &batch, s, &mut state, &cfg.inner, lr)?;
            check_loss(loss, epoch)?;
            losses.push(loss);
        }
        curve.push(crate::math::mean(&losses));
    }
    Ok((model, curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilevelResult {
    pub search: SearchResult,
    pub retrained: ToyModel,
    pub retrain_loss: Vec<f64>,
    pub test_metrics: MetricReport,
}

/// Split `data` (stratified, `cfg.val_fraction`), search on the split,
/// retrain on all of `data` under the searched strategies and evaluate on
/// `test`.
pub fn run_bilevel(
    data: &LabeledDataset,
    test: &LabeledDataset,
    attrs: AttributeSet,
    basis: &BasisSet,
    objective: &ObjectiveSpec,
    cfg: &BilevelConfig,
) -> Result<BilevelResult> {
    cfg.validate()?;
    let split = domain::stratified_split(data, cfg.val_fraction, cfg.seed)?;
    let train = data.subset(&split.train_idx)?;
    let val = data.subset(&split.val_idx)?;
    let search = search_phase(&train, &val, attrs, basis, objective, cfg)?;
    let (retrained, retrain_loss) = retrain(data, &search.strategies, cfg)?;
    let weights = match objective {
        ObjectiveSpec::Weighted { weights } => Some(weights.as_slice()),
        _ => None,
    };
    let test_metrics = test_metrics(&retrained, test, weights)?;
    Ok(BilevelResult {
        search,
        retrained,
        retrain_loss,
        test_metrics,
    })
}
