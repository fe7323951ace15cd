use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use cap_core::gmm::{aggregate_sweep, log_spaced_grid, sweep_seed, GmmSpec, SvmOptions};
use serde_json::json;

use super::validated;
use crate::args::GmmSweepArgs;
use crate::error::{CliError, CliResult};
use crate::io::{self, SweepLine};
use crate::manifest::{beside, Run};
use crate::Ctx;

/// `lo:hi:count` (log spaced) or an explicit comma-separated list.
pub fn parse_delta_grid(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Schema(format!("--delta-grid `{s}`: expected lo:hi:count or a comma-separated list"));
    let grid = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) || n < 3 {
            return Err(bad());
        }
        log_spaced_grid(lo, hi, n)
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<CliResult<Vec<_>>>()?
    };
    if grid.len() < 3 || grid.windows(2).any(|w| !(w[0] < w[1])) || !(grid[0] > 0.0) {
        return Err(CliError::Schema(format!(
            "--delta-grid `{s}`: need at least three positive, strictly increasing values"
        )));
    }
    Ok(grid)
}

/// A count `n` means seeds `base..base + n`; a list is taken as given.
pub fn parse_seeds(s: &str, base: u64) -> CliResult<Vec<u64>> {
    let bad = || CliError::Schema(format!("--seeds `{s}`: expected a count or a comma-separated list"));
    let seeds: Vec<u64> = if s.contains(',') {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<CliResult<_>>()?
    } else {
        let n: u64 = s.trim().parse().map_err(|_| bad())?;
        (base..base + n).collect()
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Run `jobs` on up to `threads` workers; results keep job order.
fn run_jobs<T: Send, F: Fn(usize) -> T + Sync>(jobs: usize, threads: usize, f: F) -> Vec<T> {
    if threads <= 1 {
        return (0..jobs).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(jobs) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                if j >= jobs {
                    break;
                }
                let r = f(j);
                slots.lock().expect("worker panicked")[j] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

pub fn run(ctx: &Ctx, args: GmmSweepArgs) -> CliResult<()> {
    let mut run = Run::new("gmm-sweep", ctx.argv.clone(), ctx.seed, ctx.threads);
    let grid = parse_delta_grid(&args.delta_grid)?;
    let seeds = parse_seeds(&args.seeds, ctx.seed)?;
    let d = (args.dbar * args.n as f64).round();
    if !(d >= 1.0) || args.n < 2 {
        return Err(CliError::Schema("need n ≥ 2 and dbar · n ≥ 1".into()));
    }
    let d = d as usize;
    let mut cells = Vec::new();
    for &pi in &args.pi {
        for &r in &args.sigma_ratio_grid {
            let spec = GmmSpec::isotropic(args.mu_norm, d, r, 1.0, pi, args.n);
            spec.validate()?;
            cells.push((pi, r, spec));
        }
    }
    if cells.is_empty() {
        return Err(CliError::Schema("empty --pi or --sigma-ratio-grid".into()));
    }
    if ctx.validate_only {
        return validated();
    }

    let opts = SvmOptions::default();
    let per_job = run_jobs(cells.len() * seeds.len(), ctx.threads, |j| {
        let (c, s) = (j / seeds.len(), j % seeds.len());
        sweep_seed(&cells[c].2, &grid, seeds[s], opts)
    });
    let mut per_job = per_job.into_iter();
    let mut lines = Vec::new();
    for (pi, r, _) in &cells {
        let curves = per_job.by_ref().take(seeds.len()).collect::<Result<Vec<_>, _>>()?;
        let sweep = aggregate_sweep(&grid, &seeds, &curves)?;
        eprintln!(
            "pi={pi} sigma_ratio={r}: delta*={:.4} ({} failed solves)",
            sweep.delta_star,
            sweep.failures.len()
        );
        let star = sweep.rows.iter().position(|row| row.delta == sweep.delta_star);
        for (i, row) in sweep.rows.iter().enumerate() {
            lines.push(SweepLine {
                pi: *pi,
                sigma_ratio: *r,
                delta: row.delta,
                rbal_mean: row.rbal_mean,
                rbal_sd: row.rbal_sd,
                is_optimal: Some(i) == star,
            });
        }
    }
    run.output(&args.out, &io::sweep_csv(&lines))?;
    let config = json!({
        "pi": args.pi,
        "sigma_ratio_grid": args.sigma_ratio_grid,
        "sigma_minus": 1.0,
        "dbar": args.dbar,
        "d": d,
        "n": args.n,
        "mu_norm": args.mu_norm,
        "delta_grid": grid,
        "seeds": seeds,
        "solver": {"tol": opts.tol, "max_iter": opts.max_iter},
        "out": args.out.display().to_string(),
    });
    run.finish(&beside(&args.out), config)?;
    Ok(())
}
