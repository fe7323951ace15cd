//! Seeded generators: long-tailed Gaussian classification data and
//! per-class label-noise injection.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{stratified_split, LabeledDataset, SplitIndices};
use crate::math::Matrix;
use crate::{Error, Result};

/// `N_k = round(N_max · ρ^{−k/(K−1)})`, at least one sample per class.
pub fn longtail_counts(k: usize, n_max: usize, rho: f64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("K", "at least two classes required"));
    }
    if !(rho >= 1.0) {
        return Err(Error::invalid("rho", "imbalance factor must be at least 1"));
    }
    Ok((0..k)
        .map(|i| {
            let exponent = -(i as f64) / (k - 1) as f64;
            let n = libm::round(n_max as f64 * libm::pow(rho, exponent));
            (n as usize).max(1)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongTailSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub n_max: usize,
    pub rho: f64,
    pub mean_scale: f64,
    /// Per-class standard deviation.
    pub sigma: Vec<f64>,
    pub seed: u64,
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < self.num_classes {
            return Err(Error::invalid("dim", "must be at least the number of classes"));
        }
        if self.n_max < 1 {
            return Err(Error::invalid("n_max", "must be positive"));
        }
        if self.sigma.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                what: "sigma",
                expected: self.num_classes,
                found: self.sigma.len(),
            });
        }
        if self.sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        Ok(())
    }
}

/// Class `k` is drawn from `N(c·e_k, σ_k² I)` with long-tailed counts.
/// Rows are grouped by class in ascending order.
pub fn make_longtail_gaussian(spec: &LongTailSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let counts = longtail_counts(spec.num_classes, spec.n_max, spec.rho)?;
    gaussian_classes(spec, &counts)
}

/// Same class-conditional distributions with explicit per-class counts
/// (for example a balanced test set).
pub fn gaussian_classes(spec: &LongTailSpec, counts: &[usize]) -> Result<LabeledDataset> {
    spec.validate()?;
    if counts.len() != spec.num_classes {
        return Err(Error::DimensionMismatch {
            what: "class counts",
            expected: spec.num_classes,
            found: counts.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n: usize = counts.iter().sum();
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for (k, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            for j in 0..spec.dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                let mean = if j == k { spec.mean_scale } else { 0.0 };
                data.push(mean + spec.sigma[k] * z);
            }
            labels.push(k);
        }
    }
    LabeledDataset::new(Matrix::from_vec(n, spec.dim, data)?, labels, spec.num_classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub ratios: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelFlip {
    pub index: usize,
    pub old_label: usize,
    pub new_label: usize,
}

/// Ratios drawn i.i.d. from `U[0, 0.5)`.
pub fn random_noise_ratios(k: usize, seed: u64) -> NoiseSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NoiseSpec {
        ratios: (0..k).map(|_| 0.5 * rng.random::<f64>()).collect(),
        seed,
    }
}

/// Flip each sample of class `k` with probability `r_k` to a label drawn
/// uniformly from the other `K − 1` classes. Features are untouched.
pub fn inject_label_noise(ds: &LabeledDataset, spec: &NoiseSpec) -> Result<(LabeledDataset, Vec<LabelFlip>)> {
    let k = ds.num_classes();
    if spec.ratios.len() != k {
        return Err(Error::DimensionMismatch {
            what: "noise ratios",
            expected: k,
            found: spec.ratios.len(),
        });
    }
    crate::attributes::noise_attribute(&spec.ratios, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = ds.labels().to_vec();
    let mut flips = Vec::new();
    for (i, y) in labels.iter_mut().enumerate() {
        let u: f64 = rng.random();
        if u < spec.ratios[*y] {
            let mut new = rng.random_range(0..k - 1);
            if new >= *y {
                new += 1;
            }
            flips.push(LabelFlip {
                index: i,
                old_label: *y,
                new_label: new,
            });
            *y = new;
        }
    }
    Ok((ds.with_labels(labels)?, flips))
}

/// Observed flip fraction per original class.
pub fn empirical_flip_rates(original: &LabeledDataset, flips: &[LabelFlip]) -> Vec<f64> {
    let counts = original.class_counts();
    let mut flipped = vec![0usize; counts.len()];
    for f in flips {
        flipped[f.old_label] += 1;
    }
    counts
        .iter()
        .zip(&flipped)
        .map(|(&c, &f)| if c == 0 { 0.0 } else { f as f64 / c as f64 })
        .collect()
}

/// Train/validation split with label noise applied to the training part only.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySplit {
    pub split: SplitIndices,
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    /// Flip indices refer to rows of `train`.
    pub flips: Vec<LabelFlip>,
}

/// Split first, then corrupt the training rows. Fails if any validation
/// label differs from the source.
pub fn split_then_corrupt(ds: &LabeledDataset, val_fraction: f64, split_seed: u64, noise: &NoiseSpec) -> Result<NoisySplit> {
    let split = stratified_split(ds, val_fraction, split_seed)?;
    let clean_train = ds.subset(&split.train_idx)?;
    let val = ds.subset(&split.val_idx)?;
    let (train, flips) = inject_label_noise(&clean_train, noise)?;
    let clean = split.val_idx.iter().zip(val.labels()).all(|(&i, &y)| ds.labels()[i] == y);
    if !clean {
        return Err(Error::invalid("validation split", "labels differ from the source"));
    }
    Ok(NoisySplit {
        split,
        train,
        val,
        flips,
    })
}
