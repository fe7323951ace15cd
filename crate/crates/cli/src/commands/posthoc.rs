use cap_core::cap_map::basis_descriptor;
use cap_core::posthoc::{adjust_logits, fit_posthoc, PosthocConfig, PosthocMode};
use serde_json::json;

use super::{basis, objective_weights, logits_metrics, objective, to_value, validated};
use crate::args::PosthocArgs;
use crate::error::{CliError, CliResult};
use crate::io;
use crate::manifest::{beside, Run};
use crate::Ctx;

pub fn run(ctx: &Ctx, args: PosthocArgs) -> CliResult<()> {
    let mut run = Run::new("posthoc", ctx.argv.clone(), ctx.seed, ctx.threads);
    let obj = objective(&args.objective, &mut run)?;
    let basis = basis(args.basis.as_deref(), &mut run)?;
    let cfg = PosthocConfig {
        steps: args.steps,
        learning_rate: args.lr,
        seed: ctx.seed,
        best_iterate_tracking: !args.last_iterate,
        ..PosthocConfig::new(PosthocMode::from(args.mode), obj)
    };
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(CliError::Schema("--lr must be positive".into()));
    }
    if ctx.validate_only {
        return validated();
    }
    run.input(&args.logits)?;
    run.input(&args.attrs)?;
    let val = io::read_logits(&args.logits)?;
    let attrs = io::read_attributes(&args.attrs)?;
    if attrs.num_classes() != val.num_classes() {
        return Err(CliError::parse(
            &args.attrs,
            format!("{} classes, logits have {}", attrs.num_classes(), val.num_classes()),
        ));
    }
    let model = fit_posthoc(&val, &attrs, &basis, &cfg)?;
    let test = match &args.test_logits {
        Some(p) => {
            run.input(p)?;
            let t = io::read_logits(p)?;
            if t.num_classes() != val.num_classes() {
                return Err(CliError::parse(p, "class count differs from the validation logits"));
            }
            let adjusted = adjust_logits(&t, &model.strategies, model.mode)?;
            let w = objective_weights(&cfg.objective);
            Some(json!({
                "pretrained": to_value(&logits_metrics(&t, w, p)?),
                "fitted": to_value(&logits_metrics(&adjusted, w, p)?),
            }))
        }
        None => None,
    };
    let out = json!({
        "mode": to_value(&model.mode),
        "objective": to_value(&cfg.objective),
        "features": model.dictionary.column_labels(),
        "cap_weights": to_value(&model.cap_weights),
        "strategies": to_value(&model.strategies),
        "pretrained_objective": model.initial_objective,
        "fitted_objective": model.objective,
        "best_step": model.best_step,
        "history": model.history,
        "test": test,
    });
    run.output(&args.out, &io::to_json_bytes(&out))?;
    let config = json!({
        "logits": args.logits.display().to_string(),
        "attrs": args.attrs.display().to_string(),
        "posthoc": to_value(&cfg),
        "basis": to_value(&basis),
        "basis_columns": basis_descriptor(&basis),
        "test_logits": args.test_logits.as_ref().map(|p| p.display().to_string()),
        "out": args.out.display().to_string(),
    });
    run.finish(&beside(&args.out), config)?;
    Ok(())
}
