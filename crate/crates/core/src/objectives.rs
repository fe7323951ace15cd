//! Fairness objectives over class-conditional errors, and their surrogates
//! over per-class validation losses.
//!
//! Tail objectives rank classes by descending error, breaking ties by class
//! index. `Quantile(a)` returns the error at 1-based rank `⌈K·a⌉`; `CVaR(a)`
//! averages the first `⌈K·a⌉` ranks. `Weighted` is normalised by `1/K` so that
//! uniform weights give the balanced error.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::ClassErrorVector;
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", try_from = "RawObjective")]
pub enum ObjectiveSpec {
    Plain,
    Balanced,
    Weighted { weights: Vec<f64> },
    SdevCombo { lambda: f64 },
    Cvar { a: f64 },
    Quantile { a: f64 },
}

/// Flat wire form; every key not used by the named variant is rejected.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObjective {
    variant: String,
    weights: Option<Vec<f64>>,
    lambda: Option<f64>,
    a: Option<f64>,
}

impl TryFrom<RawObjective> for ObjectiveSpec {
    type Error = String;

    fn try_from(r: RawObjective) -> core::result::Result<Self, String> {
        let present = [("weights", r.weights.is_some()), ("lambda", r.lambda.is_some()), ("a", r.a.is_some())];
        let (spec, used) = match r.variant.as_str() {
            "plain" => (ObjectiveSpec::Plain, ""),
            "balanced" => (ObjectiveSpec::Balanced, ""),
            "weighted" => (
                ObjectiveSpec::Weighted {
                    weights: r.weights.clone().ok_or("weighted objective needs `weights`")?,
                },
                "weights",
            ),
            "sdev_combo" => (
                ObjectiveSpec::SdevCombo {
                    lambda: r.lambda.ok_or("sdev_combo objective needs `lambda`")?,
                },
                "lambda",
            ),
            "cvar" => (ObjectiveSpec::Cvar { a: r.a.ok_or("cvar objective needs `a`")? }, "a"),
            "quantile" => (ObjectiveSpec::Quantile { a: r.a.ok_or("quantile objective needs `a`")? }, "a"),
            other => return Err(format!("unknown objective variant `{other}`")),
        };
        if let Some((key, _)) = present.iter().find(|(k, p)| *p && *k != used) {
            return Err(format!("key `{key}` is not valid for objective `{}`", r.variant));
        }
        Ok(spec)
    }
}

impl ObjectiveSpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        match self {
            ObjectiveSpec::Plain | ObjectiveSpec::Balanced => Ok(()),
            ObjectiveSpec::Weighted { weights } => {
                if weights.len() != k {
                    return Err(Error::DimensionMismatch {
                        what: "objective weights",
                        expected: k,
                        found: weights.len(),
                    });
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::invalid("objective weights", "must be finite and nonnegative"));
                }
                let s: f64 = weights.iter().sum();
                if (s - k as f64).abs() > 1e-6 {
                    return Err(Error::invalid("objective weights", alloc::format!("sum {s} differs from K = {k}")));
                }
                Ok(())
            }
            ObjectiveSpec::SdevCombo { lambda } => {
                if (0.0..=1.0).contains(lambda) {
                    Ok(())
                } else {
                    Err(Error::invalid("lambda", "must lie in [0, 1]"))
                }
            }
            ObjectiveSpec::Cvar { a } | ObjectiveSpec::Quantile { a } => {
                if *a > 0.0 && *a <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("a", "must lie in (0, 1]"))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveSpec::Plain => "plain",
            ObjectiveSpec::Balanced => "balanced",
            ObjectiveSpec::Weighted { .. } => "weighted",
            ObjectiveSpec::SdevCombo { .. } => "sdev_combo",
            ObjectiveSpec::Cvar { .. } => "cvar",
            ObjectiveSpec::Quantile { .. } => "quantile",
        }
    }
}

/// `⌈K·a⌉` clamped to `[1, K]`. A `1e-9` slack absorbs representation error
/// in products such as `10 × 0.3`.
pub fn tail_count(k: usize, a: f64) -> usize {
    let c = libm::ceil(k as f64 * a - 1e-9) as usize;
    c.clamp(1, k)
}

/// Class indices ordered by descending value, ties by ascending index.
pub fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    idx
}

/// The `c` largest entries, returned in ascending class order so that sums
/// over all `K` classes reduce in the same order as the balanced mean.
fn tail_in_index_order(values: &[f64], c: usize) -> Vec<usize> {
    let mut top = descending_order(values);
    top.truncate(c);
    top.sort_unstable();
    top
}

fn check_errors(errs: &ClassErrorVector) -> Result<Vec<f64>> {
    errs.defined()
}

/// Value of `spec` on class errors; `plain_err` feeds `Plain` and `SdevCombo`.
pub fn eval_objective(errs: &ClassErrorVector, plain_err: f64, spec: &ObjectiveSpec) -> Result<f64> {
    let e = check_errors(errs)?;
    spec.validate(e.len())?;
    if !(0.0..=1.0).contains(&plain_err) {
        return Err(Error::invalid("plain error", "must lie in [0, 1]"));
    }
    Ok(objective_value(&e, plain_err, spec))
}

fn objective_value(e: &[f64], plain: f64, spec: &ObjectiveSpec) -> f64 {
    let k = e.len();
    match spec {
        ObjectiveSpec::Plain => plain,
        ObjectiveSpec::Balanced => math::mean(e),
        ObjectiveSpec::Weighted { weights } => {
            let terms: Vec<f64> = e.iter().zip(weights).map(|(x, w)| x * w).collect();
            math::pairwise_sum(&terms) / k as f64
        }
        ObjectiveSpec::SdevCombo { lambda } => lambda * plain + (1.0 - lambda) * math::population_sd(e),
        ObjectiveSpec::Quantile { a } => {
            let order = descending_order(e);
            e[order[tail_count(k, *a) - 1]]
        }
        ObjectiveSpec::Cvar { a } => {
            let top: Vec<f64> = tail_in_index_order(e, tail_count(k, *a)).iter().map(|&i| e[i]).collect();
            math::mean(&top)
        }
    }
}

/// The metric bundle reported by the runners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub plain: f64,
    pub balanced: f64,
    pub sdev: f64,
    pub cvar_0_2: f64,
    pub quant_0_2: f64,
    pub weighted: f64,
    pub class_errors: Vec<f64>,
}

/// `weights` defaults to uniform, in which case `weighted == balanced`.
pub fn metric_report(errs: &ClassErrorVector, weights: Option<&[f64]>) -> Result<MetricReport> {
    let e = check_errors(errs)?;
    let k = e.len();
    let plain = errs.plain_error();
    let w = weights.map_or_else(|| vec![1.0; k], <[f64]>::to_vec);
    let weighted_spec = ObjectiveSpec::Weighted { weights: w };
    weighted_spec.validate(k)?;
    Ok(MetricReport {
        plain,
        balanced: objective_value(&e, plain, &ObjectiveSpec::Balanced),
        sdev: math::population_sd(&e),
        cvar_0_2: objective_value(&e, plain, &ObjectiveSpec::Cvar { a: 0.2 }),
        quant_0_2: objective_value(&e, plain, &ObjectiveSpec::Quantile { a: 0.2 }),
        weighted: objective_value(&e, plain, &weighted_spec),
        class_errors: e,
    })
}

/// Smooth stand-in for [`eval_objective`]: per-class mean losses replace the
/// class errors, and `priors` (class proportions) stand in for the plain
/// error's support weights. Returns the value and its (sub)gradient.
///
/// Tail objectives use hard top-`⌈K·a⌉` selection; SD uses the analytic
/// gradient `(L_k − mean) / (K · SD)`, zero when SD is zero.
pub fn surrogate_objective(losses: &[f64], priors: &[f64], spec: &ObjectiveSpec) -> Result<(f64, Vec<f64>)> {
    let k = losses.len();
    if priors.len() != k {
        return Err(Error::DimensionMismatch {
            what: "class priors",
            expected: k,
            found: priors.len(),
        });
    }
    if let Some(i) = losses.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "per-class loss",
            index: i,
        });
    }
    spec.validate(k)?;
    let kf = k as f64;
    let plain = || {
        let t: Vec<f64> = losses.iter().zip(priors).map(|(l, p)| l * p).collect();
        math::pairwise_sum(&t)
    };
    let out = match spec {
        ObjectiveSpec::Plain => (plain(), priors.to_vec()),
        ObjectiveSpec::Balanced => (math::mean(losses), vec![1.0 / kf; k]),
        ObjectiveSpec::Weighted { weights } => {
            let t: Vec<f64> = losses.iter().zip(weights).map(|(l, w)| l * w).collect();
            (math::pairwise_sum(&t) / kf, weights.iter().map(|w| w / kf).collect())
        }
        ObjectiveSpec::SdevCombo { lambda } => {
            let m = math::mean(losses);
            let sd = math::population_sd(losses);
            let value = lambda * plain() + (1.0 - lambda) * sd;
            let grad = losses
                .iter()
                .zip(priors)
                .map(|(&l, &p)| {
                    let dsd = if sd > 0.0 { (l - m) / (kf * sd) } else { 0.0 };
                    lambda * p + (1.0 - lambda) * dsd
                })
                .collect();
            (value, grad)
        }
        ObjectiveSpec::Quantile { a } => {
            let order = descending_order(losses);
            let pick = order[tail_count(k, *a) - 1];
            let mut g = vec![0.0; k];
            g[pick] = 1.0;
            (losses[pick], g)
        }
        ObjectiveSpec::Cvar { a } => {
            let c = tail_count(k, *a);
            let order = tail_in_index_order(losses, c);
            let mut g = vec![0.0; k];
            let top: Vec<f64> = order[..c].iter().map(|&i| losses[i]).collect();
            for &i in &order[..c] {
                g[i] = 1.0 / c as f64;
            }
            (math::mean(&top), g)
        }
    };
    Ok(out)
}
