use cap_core::bilevel::{retrain, run_bilevel, search_phase, test_metrics, AttributeSet, BilevelResult};
use cap_core::cap_map::StrategyVectors;
use cap_core::synth::split_then_corrupt;
use serde_json::json;

use super::{basis, objective_weights, bilevel_config, objective, synth, to_value, validated};
use crate::args::BilevelArgs;
use crate::error::{CliError, CliResult};
use crate::io;
use crate::manifest::{beside, Run};
use crate::Ctx;

pub fn run(ctx: &Ctx, args: BilevelArgs) -> CliResult<()> {
    let mut run = Run::new("bilevel", ctx.argv.clone(), ctx.seed, ctx.threads);
    let attrs = AttributeSet::parse(&args.attrs)
        .ok_or_else(|| CliError::Schema(format!("--attrs `{}`: expected freq, diff, freq+diff or identity", args.attrs)))?;
    let obj = objective(&args.objective, &mut run)?;
    let basis = basis(args.basis.as_deref(), &mut run)?;
    let cfg = bilevel_config(args.config.as_deref(), ctx.seed, &mut run)?;
    let synth_cfg = if args.data.extension().is_some_and(|e| e == "json") {
        Some(synth::load_config(&args.data.display().to_string(), &mut run)?)
    } else {
        if args.test.is_none() {
            return Err(CliError::Schema("--test is required with a CSV --data".into()));
        }
        None
    };
    if ctx.validate_only {
        return validated();
    }

    let (data, test, noise) = match &synth_cfg {
        Some(s) => {
            if let Some(t) = &args.test {
                return Err(CliError::Schema(format!("--test {} conflicts with a synth --data", t.display())));
            }
            let (pool, test) = s.pool_and_test(ctx.seed)?;
            (pool, test, s.noise_spec(ctx.seed))
        }
        None => {
            run.input(&args.data)?;
            let data = io::read_dataset(&args.data, None)?;
            let t = args.test.as_ref().expect("checked above");
            run.input(t)?;
            let test = io::read_dataset(t, Some(data.num_classes()))?;
            if test.dim() != data.dim() {
                return Err(CliError::parse(t, "feature count differs from --data"));
            }
            (data, test, None)
        }
    };
    obj.validate(data.num_classes())?;

    let (result, flips, train_all) = match &noise {
        None => (run_bilevel(&data, &test, attrs, &basis, &obj, &cfg)?, 0, data),
        Some(n) => {
            // Split first so the validation part stays clean.
            let s = split_then_corrupt(&data, cfg.val_fraction, cfg.seed, n)?;
            let search = search_phase(&s.train, &s.val, attrs, &basis, &obj, &cfg)?;
            let mut labels = data.labels().to_vec();
            for f in &s.flips {
                labels[s.split.train_idx[f.index]] = f.new_label;
            }
            let noisy = data.with_labels(labels)?;
            let (retrained, retrain_loss) = retrain(&noisy, &search.strategies, &cfg)?;
            let test_metrics = test_metrics(&retrained, &test, objective_weights(&obj))?;
            let r = BilevelResult {
                search,
                retrained,
                retrain_loss,
                test_metrics,
            };
            (r, s.flips.len(), noisy)
        }
    };
    let baseline = if args.baseline {
        let (m, _) = retrain(&train_all, &StrategyVectors::plain(train_all.num_classes()), &cfg)?;
        Some(to_value(&test_metrics(&m, &test, objective_weights(&obj))?))
    } else {
        None
    };

    let s = &result.search;
    let out = json!({
        "attributes": s.attributes,
        "features": s.dictionary.column_labels(),
        "cap_weights": to_value(&s.cap_weights),
        "strategies": to_value(&s.strategies),
        "best_epoch": s.best_epoch,
        "trace": to_value(&s.trace),
        "retrain_loss": result.retrain_loss,
        "test_metrics": to_value(&result.test_metrics),
        "baseline_test_metrics": baseline,
        "label_flips": flips,
    });
    run.output(&args.out, &io::to_json_bytes(&out))?;
    let config = json!({
        "data": args.data.display().to_string(),
        "synth": synth_cfg.as_ref().map(to_value),
        "test": args.test.as_ref().map(|p| p.display().to_string()),
        "attrs": to_value(&attrs),
        "objective": to_value(&obj),
        "basis": to_value(&basis),
        "config": to_value(&cfg),
        "baseline": args.baseline,
        "out": args.out.display().to_string(),
    });
    run.finish(&beside(&args.out), config)?;
    Ok(())
}
