pub mod bilevel;
pub mod eval;
pub mod gmm;
pub mod posthoc;
pub mod synth;
pub mod train;

use std::path::Path;

use cap_core::bilevel::BilevelConfig;
use cap_core::cap_map::BasisSet;
use cap_core::domain::{predict_argmax, class_conditional_errors, LogitMatrix};
use cap_core::objectives::{metric_report, MetricReport, ObjectiveSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::io;
use crate::manifest::Run;

/// A JSON argument given inline or as a file; files are recorded as inputs.
pub fn json_value(arg: &str, run: &mut Run) -> CliResult<Value> {
    let (v, path): (Value, _) = io::json_arg(arg)?;
    if let Some(p) = path {
        run.input(&p)?;
    }
    Ok(v)
}

pub fn from_value<T: DeserializeOwned>(v: Value, what: &str) -> CliResult<T> {
    serde_json::from_value(v).map_err(|e| CliError::Schema(format!("{what}: {e}")))
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serialisable configuration")
}

/// Objects merge key by key; anything else in `overlay` replaces `base`.
pub fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn objective(arg: &str, run: &mut Run) -> CliResult<ObjectiveSpec> {
    from_value(json_value(arg, run)?, "objective")
}

pub fn basis(arg: Option<&str>, run: &mut Run) -> CliResult<BasisSet> {
    let b = match arg {
        Some(a) => {
            let mut v = to_value(&BasisSet::default());
            merge(&mut v, json_value(a, run)?);
            from_value(v, "basis")?
        }
        None => BasisSet::default(),
    };
    b.validate()?;
    Ok(b)
}

/// Defaults overlaid with the given document. The seed comes from `--seed`.
pub fn bilevel_config(arg: Option<&str>, seed: u64, run: &mut Run) -> CliResult<BilevelConfig> {
    let mut v = to_value(&BilevelConfig::default());
    if let Some(a) = arg {
        let user = json_value(a, run)?;
        if user.get("seed").is_some() {
            return Err(CliError::Schema("config: set the seed with --seed".into()));
        }
        merge(&mut v, user);
    }
    v["seed"] = Value::from(seed);
    let cfg: BilevelConfig = from_value(v, "config")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn logits_metrics(o: &LogitMatrix, weights: Option<&[f64]>, path: &Path) -> CliResult<MetricReport> {
    let labels = o
        .labels()
        .ok_or_else(|| CliError::parse(path, "metrics need labelled logits"))?;
    let preds = predict_argmax(o)?;
    let errs = class_conditional_errors(&preds, labels, o.num_classes())?;
    Ok(metric_report(&errs, weights)?)
}

/// Test weights for the weighted metric when the objective carries them.
pub fn objective_weights(o: &ObjectiveSpec) -> Option<&[f64]> {
    match o {
        ObjectiveSpec::Weighted { weights } => Some(weights),
        _ => None,
    }
}

pub fn validated() -> CliResult<()> {
    eprintln!("configuration ok");
    Ok(())
}
