//! Long-tailed Gaussian data with a clean validation set.
//!
//! Seeds derive from the run seed `s`: training pool `s`, balanced
//! validation draw `s + 1000`, test draw `s + 2000`, noise `s + 1`, random
//! noise ratios `s + 3000`. The stratified split uses `s`.

use cap_core::attributes::{freq_from_counts, names, noise_attribute, AttributeTable};
use cap_core::domain::LabeledDataset;
use cap_core::synth::{
    gaussian_classes, inject_label_noise, make_longtail_gaussian, random_noise_ratios, split_then_corrupt, LabelFlip,
    LongTailSpec, NoiseSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{from_value, json_value, to_value, validated};
use crate::args::SynthArgs;
use crate::error::{CliError, CliResult};
use crate::io;
use crate::manifest::{in_dir, Run};
use crate::Ctx;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Ratios(Vec<f64>),
    /// Ratios drawn from `U[0, 0.5)`.
    Random,
}

fn default_val_fraction() -> f64 {
    0.2
}

fn default_test_per_class() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub n_max: usize,
    pub rho: f64,
    pub mean_scale: f64,
    pub sigma: Vec<f64>,
    /// Fraction of the pool held out when `val_per_class` is absent.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Draw a separate balanced validation set of this size per class.
    #[serde(default)]
    pub val_per_class: Option<usize>,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
}

pub struct Synth {
    /// Training rows after noise.
    pub train: LabeledDataset,
    /// Always clean.
    pub val: LabeledDataset,
    pub test: LabeledDataset,
    /// Indices refer to rows of `train`.
    pub flips: Vec<LabelFlip>,
    pub noise: Option<NoiseSpec>,
}

impl SynthConfig {
    pub fn longtail(&self, seed: u64) -> LongTailSpec {
        LongTailSpec {
            num_classes: self.num_classes,
            dim: self.dim,
            n_max: self.n_max,
            rho: self.rho,
            mean_scale: self.mean_scale,
            sigma: self.sigma.clone(),
            seed,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.longtail(0).validate()?;
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(CliError::Schema("val_fraction must lie strictly between 0 and 1".into()));
        }
        if self.val_per_class == Some(0) || self.test_per_class == 0 {
            return Err(CliError::Schema("per-class set sizes must be positive".into()));
        }
        if let Some(NoiseConfig::Ratios(r)) = &self.noise {
            if r.len() != self.num_classes {
                return Err(CliError::Schema(format!(
                    "noise ratios: expected {} values, found {}",
                    self.num_classes,
                    r.len()
                )));
            }
            noise_attribute(r, 0.0)?;
        }
        Ok(())
    }

    pub fn noise_spec(&self, seed: u64) -> Option<NoiseSpec> {
        let ratios = match self.noise.as_ref()? {
            NoiseConfig::Ratios(r) => r.clone(),
            NoiseConfig::Random => random_noise_ratios(self.num_classes, seed + 3000).ratios,
        };
        Some(NoiseSpec { ratios, seed: seed + 1 })
    }

    /// Clean training pool and test set.
    pub fn pool_and_test(&self, seed: u64) -> CliResult<(LabeledDataset, LabeledDataset)> {
        let pool = make_longtail_gaussian(&self.longtail(seed))?;
        let test = gaussian_classes(&self.longtail(seed + 2000), &vec![self.test_per_class; self.num_classes])?;
        Ok((pool, test))
    }

    pub fn generate(&self, seed: u64) -> CliResult<Synth> {
        let (pool, test) = self.pool_and_test(seed)?;
        let noise = self.noise_spec(seed);
        let (train, val, flips) = match self.val_per_class {
            Some(m) => {
                let val = gaussian_classes(&self.longtail(seed + 1000), &vec![m; self.num_classes])?;
                let (train, flips) = match &noise {
                    Some(n) => inject_label_noise(&pool, n)?,
                    None => (pool, Vec::new()),
                };
                (train, val, flips)
            }
            None => {
                let quiet = NoiseSpec {
                    ratios: vec![0.0; self.num_classes],
                    seed: 0,
                };
                let s = split_then_corrupt(&pool, self.val_fraction, seed, noise.as_ref().unwrap_or(&quiet))?;
                (s.train, s.val, s.flips)
            }
        };
        Ok(Synth {
            train,
            val,
            test,
            flips,
            noise,
        })
    }
}

pub fn attributes(s: &Synth) -> CliResult<AttributeTable> {
    let mut t = AttributeTable::new(s.train.num_classes()).with(names::FREQ, &freq_from_counts(&s.train.class_counts())?)?;
    if let Some(n) = &s.noise {
        let eps = t.clamp_epsilon();
        t = t.with(names::NOISE, &noise_attribute(&n.ratios, eps)?)?;
    }
    Ok(t)
}

pub fn load_config(arg: &str, run: &mut Run) -> CliResult<SynthConfig> {
    let cfg: SynthConfig = from_value(json_value(arg, run)?, "synth config")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(ctx: &Ctx, args: SynthArgs) -> CliResult<()> {
    let mut run = Run::new("synth", ctx.argv.clone(), ctx.seed, ctx.threads);
    let cfg = load_config(&args.config, &mut run)?;
    if ctx.validate_only {
        return validated();
    }
    let s = cfg.generate(ctx.seed)?;
    let dir = &args.out_dir;
    run.output(&dir.join("train.csv"), &io::dataset_csv(&s.train))?;
    run.output(&dir.join("val.csv"), &io::dataset_csv(&s.val))?;
    run.output(&dir.join("test.csv"), &io::dataset_csv(&s.test))?;
    run.output(&dir.join("noise.csv"), &io::noise_csv(&s.flips))?;
    run.output(&dir.join("attrs.csv"), &io::attributes_csv(&attributes(&s)?))?;
    let config = json!({
        "config": to_value(&cfg),
        "noise": s.noise.as_ref().map(to_value),
        "out_dir": dir.display().to_string(),
    });
    run.finish(&in_dir(dir), config)?;
    Ok(())
}
