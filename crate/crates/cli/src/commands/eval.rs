use cap_core::attributes::{diff_from_errors, names, AttributeTable, DEFAULT_CLAMP_EPSILON};
use cap_core::cap_map::StrategyVectors;
use cap_core::domain::{class_conditional_errors, predict_argmax};
use cap_core::posthoc::{adjust_logits, PosthocMode};
use serde_json::json;

use super::{from_value, json_value, logits_metrics, to_value, validated};
use crate::args::EvalArgs;
use crate::error::{CliError, CliResult};
use crate::io;
use crate::manifest::{beside, Run};
use crate::Ctx;

pub fn run(ctx: &Ctx, args: EvalArgs) -> CliResult<()> {
    let mut run = Run::new("eval", ctx.argv.clone(), ctx.seed, ctx.threads);
    let strategies: Option<StrategyVectors> = match &args.strategies {
        Some(a) => Some(from_value(json_value(a, &mut run)?, "strategies")?),
        None => None,
    };
    let mode = PosthocMode::from(args.mode);
    if let Some(w) = &args.weights {
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
            return Err(CliError::Schema("weights must be nonnegative with a positive sum".into()));
        }
    }
    if ctx.validate_only {
        return validated();
    }
    run.input(&args.logits)?;
    let mut o = io::read_logits(&args.logits)?;
    if let Some(s) = &strategies {
        o = adjust_logits(&o, s, mode)?;
    }
    let metrics = logits_metrics(&o, args.weights.as_deref(), &args.logits)?;
    if let Some(path) = &args.attrs_out {
        let mut table = match &args.attrs_in {
            Some(p) => {
                run.input(p)?;
                io::read_attributes(p)?
            }
            None => AttributeTable::new(o.num_classes()),
        };
        if table.num_classes() != o.num_classes() {
            return Err(CliError::Schema("--attrs-in class count differs from the logits".into()));
        }
        let labels = o.labels().expect("metrics required labels");
        let errs = class_conditional_errors(&predict_argmax(&o)?, labels, o.num_classes())?;
        let diff = diff_from_errors(&errs, DEFAULT_CLAMP_EPSILON)?;
        if table.column_by_name(names::DIFF).is_some() {
            table.replace(names::DIFF, &diff)?;
        } else {
            table.push(names::DIFF, &diff)?;
        }
        run.output(path, &io::attributes_csv(&table))?;
    }
    let out = json!({
        "num_samples": o.len(),
        "num_classes": o.num_classes(),
        "adjusted": strategies.is_some(),
        "metrics": to_value(&metrics),
    });
    run.output(&args.out, &io::to_json_bytes(&out))?;
    let config = json!({
        "logits": args.logits.display().to_string(),
        "strategies": strategies.as_ref().map(to_value),
        "mode": to_value(&mode),
        "weights": args.weights,
        "attrs_in": args.attrs_in.as_ref().map(|p| p.display().to_string()),
        "attrs_out": args.attrs_out.as_ref().map(|p| p.display().to_string()),
        "out": args.out.display().to_string(),
    });
    run.finish(&beside(&args.out), config)?;
    Ok(())
}
