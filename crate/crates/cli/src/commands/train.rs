use cap_core::bilevel::retrain;
use cap_core::cap_map::StrategyVectors;
use serde::Serialize;
use serde_json::json;

use super::{bilevel_config, from_value, json_value, to_value, validated};
use crate::args::TrainArgs;
use crate::error::{CliError, CliResult};
use crate::io;
use crate::manifest::{in_dir, Run};
use crate::Ctx;

#[derive(Serialize)]
struct TrainOutput<'a> {
    model: &'a cap_core::bilevel::ToyModel,
    strategies: &'a StrategyVectors,
    epoch_loss: &'a [f64],
}

pub fn run(ctx: &Ctx, args: TrainArgs) -> CliResult<()> {
    let mut run = Run::new("train", ctx.argv.clone(), ctx.seed, ctx.threads);
    let cfg = bilevel_config(args.config.as_deref(), ctx.seed, &mut run)?;
    let given: Option<StrategyVectors> = match &args.strategies {
        Some(a) => Some(from_value(json_value(a, &mut run)?, "strategies")?),
        None => None,
    };
    if ctx.validate_only {
        return validated();
    }
    run.input(&args.train)?;
    let train = io::read_dataset(&args.train, None)?;
    let k = train.num_classes();
    let strategies = given.unwrap_or_else(|| StrategyVectors::plain(k));
    strategies.validate(k)?;
    let mut predict = Vec::new();
    for p in &args.predict {
        run.input(p)?;
        predict.push(io::read_dataset(p, Some(k))?);
    }
    let (model, loss) = retrain(&train, &strategies, &cfg)?;
    let dir = &args.out_dir;
    for (p, ds) in args.predict.iter().zip(&predict) {
        if ds.dim() != train.dim() {
            return Err(CliError::parse(p, format!("expected {} features, found {}", train.dim(), ds.dim())));
        }
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
        let logits = model.logits(ds.features())?;
        run.output(&dir.join(format!("{stem}_logits.csv")), &io::logits_csv(&logits, Some(ds.labels())))?;
    }
    let out = TrainOutput {
        model: &model,
        strategies: &strategies,
        epoch_loss: &loss,
    };
    run.output(&dir.join("model.json"), &io::to_json_bytes(&out))?;
    let config = json!({
        "train": args.train.display().to_string(),
        "predict": args.predict.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "config": to_value(&cfg),
        "strategies": to_value(&strategies),
        "out_dir": dir.display().to_string(),
    });
    run.finish(&in_dir(dir), config)?;
    Ok(())
}
