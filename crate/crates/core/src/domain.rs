//! Datasets, logits, predictions, class-conditional errors and splits.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{self, Matrix};
use crate::{Error, Result};

/// Features and integer labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "at least two classes required"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("labels", "dataset is empty"));
        }
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "dataset labels",
                expected: features.rows(),
                found: labels.len(),
            });
        }
        if let Some(i) = labels.iter().position(|&y| y >= num_classes) {
            return Err(Error::invalid(
                "labels",
                alloc::format!("label {} at row {i} is not below K = {num_classes}", labels[i]),
            ));
        }
        if let Some(i) = features.first_non_finite_row() {
            return Err(Error::NonFinite {
                what: "feature row",
                index: i,
            });
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.num_classes)
    }

    /// Subset in the order given by `idx`.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(self.features.select_rows(idx), labels, self.num_classes)
    }

    /// Same features with replaced labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        LabeledDataset::new(self.features.clone(), labels, self.num_classes)
    }
}

pub fn class_counts(labels: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0usize; k];
    for &y in labels {
        if y < k {
            c[y] += 1;
        }
    }
    c
}

/// Model outputs, one row of `K` logits per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitMatrix {
    values: Matrix,
    labels: Option<Vec<usize>>,
}

impl LogitMatrix {
    pub fn new(values: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if values.cols() < 2 {
            return Err(Error::invalid("logits", "need at least two columns"));
        }
        if let Some(i) = values.first_non_finite_row() {
            return Err(Error::NonFinite {
                what: "logit row",
                index: i,
            });
        }
        if let Some(l) = &labels {
            if l.len() != values.rows() {
                return Err(Error::DimensionMismatch {
                    what: "logit labels",
                    expected: values.rows(),
                    found: l.len(),
                });
            }
            if let Some(i) = l.iter().position(|&y| y >= values.cols()) {
                return Err(Error::invalid(
                    "logit labels",
                    alloc::format!("label at row {i} is out of range"),
                ));
            }
        }
        Ok(LogitMatrix { values, labels })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.values.cols()
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub(crate) fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::invalid("logits", "labels are required"))
    }
}

/// Per-class error rates. `None` marks a class without support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassErrorVector {
    pub errors: Vec<Option<f64>>,
    pub support: Vec<usize>,
}

impl ClassErrorVector {
    pub fn num_classes(&self) -> usize {
        self.errors.len()
    }

    /// All errors, failing on the first class without support.
    pub fn defined(&self) -> Result<Vec<f64>> {
        self.errors
            .iter()
            .enumerate()
            .map(|(k, e)| e.ok_or(Error::UndefinedClassError { class: k }))
            .collect()
    }

    /// Support-weighted error, i.e. the plain misclassification rate.
    pub fn plain_error(&self) -> f64 {
        let n: usize = self.support.iter().sum();
        if n == 0 {
            return 0.0;
        }
        let wrong: f64 = self
            .errors
            .iter()
            .zip(&self.support)
            .map(|(e, &s)| e.unwrap_or(0.0) * s as f64)
            .sum();
        wrong / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

/// Row-wise argmax; ties go to the smallest index.
pub fn predict_argmax(logits: &LogitMatrix) -> Result<Vec<usize>> {
    predict_rows(logits.values())
}

pub(crate) fn predict_rows(values: &Matrix) -> Result<Vec<usize>> {
    if values.rows() == 0 {
        return Err(Error::invalid("logits", "no rows"));
    }
    values
        .iter_rows()
        .enumerate()
        .map(|(i, r)| {
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "logit row",
                    index: i,
                });
            }
            Ok(math::argmax(r).unwrap_or(0))
        })
        .collect()
}

pub fn class_conditional_errors(preds: &[usize], labels: &[usize], k: usize) -> Result<ClassErrorVector> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions",
            expected: labels.len(),
            found: preds.len(),
        });
    }
    let mut support = vec![0usize; k];
    let mut wrong = vec![0usize; k];
    for (&p, &y) in preds.iter().zip(labels) {
        if y >= k {
            return Err(Error::invalid("labels", alloc::format!("label {y} is not below K = {k}")));
        }
        support[y] += 1;
        if p != y {
            wrong[y] += 1;
        }
    }
    let errors = support
        .iter()
        .zip(&wrong)
        .map(|(&s, &w)| (s > 0).then(|| w as f64 / s as f64))
        .collect();
    Ok(ClassErrorVector { errors, support })
}

/// Stratified train/validation split.
///
/// Each class sends `floor(count * val_fraction)` of its samples, chosen by a
/// seeded shuffle, to validation. Both index lists come back sorted.
pub fn stratified_split(ds: &LabeledDataset, val_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid("val_fraction", "must lie strictly between 0 and 1"));
    }
    let k = ds.num_classes();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in ds.labels().iter().enumerate() {
        per_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (class, idx) in per_class.iter_mut().enumerate() {
        let n_val = libm::floor(idx.len() as f64 * val_fraction) as usize;
        if idx.len() - n_val < 1 {
            return Err(Error::EmptyClass { class });
        }
        idx.shuffle(&mut rng);
        val_idx.extend_from_slice(&idx[..n_val]);
        train_idx.extend_from_slice(&idx[n_val..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok(SplitIndices { train_idx, val_idx })
}
