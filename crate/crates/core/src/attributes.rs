//! Per-class attribute table.
//!
//! Each column is one attribute evaluated for every class. Standard columns
//! use the names in [`names`]; any other name is accepted as a custom column.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::ClassErrorVector;
use crate::math::{self, Matrix};
use crate::{Error, Result};

pub const DEFAULT_CLAMP_EPSILON: f64 = 1e-6;

pub mod names {
    pub const FREQ: &str = "freq";
    pub const DIFF: &str = "diff";
    pub const WEIGHTS: &str = "weights";
    pub const NOISE: &str = "noise";
    pub const NORM: &str = "norm";
    pub const IDENTITY: &str = "identity";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeTable {
    names: Vec<String>,
    values: Matrix,
    clamp_epsilon: f64,
}

impl AttributeTable {
    /// Empty table for `k` classes.
    pub fn new(k: usize) -> Self {
        AttributeTable {
            names: Vec::new(),
            values: Matrix::zeros(k, 0),
            clamp_epsilon: DEFAULT_CLAMP_EPSILON,
        }
    }

    pub fn with_clamp_epsilon(mut self, eps: f64) -> Self {
        self.clamp_epsilon = eps;
        self
    }

    /// Append a column. A `freq` column must sum to one.
    pub fn push(&mut self, name: &str, column: &[f64]) -> Result<()> {
        let k = self.num_classes();
        if column.len() != k {
            return Err(Error::DimensionMismatch {
                what: "attribute column",
                expected: k,
                found: column.len(),
            });
        }
        if let Some(i) = column.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "attribute column",
                index: i,
            });
        }
        if name == names::FREQ {
            let s: f64 = column.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("freq", alloc::format!("column sums to {s}, not 1")));
            }
        }
        let n = self.values.cols();
        let mut data = Vec::with_capacity(k * (n + 1));
        for (row, &v) in self.values.iter_rows().zip(column) {
            data.extend_from_slice(row);
            data.push(v);
        }
        if n == 0 {
            data = column.to_vec();
        }
        self.values = Matrix::from_vec(k, n + 1, data)?;
        self.names.push(name.to_string());
        Ok(())
    }

    pub fn with(mut self, name: &str, column: &[f64]) -> Result<Self> {
        self.push(name, column)?;
        Ok(self)
    }

    /// Append the `k` one-hot identity columns `identity_0 .. identity_{k-1}`.
    pub fn with_identity(mut self) -> Result<Self> {
        let id = identity_attribute(self.num_classes());
        for j in 0..id.cols() {
            let name = alloc::format!("{}_{j}", names::IDENTITY);
            self.push(&name, &id.column(j))?;
        }
        Ok(self)
    }

    pub fn from_parts(names: Vec<String>, values: Matrix, clamp_epsilon: f64) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(Error::DimensionMismatch {
                what: "attribute names",
                expected: values.cols(),
                found: names.len(),
            });
        }
        let mut t = AttributeTable::new(values.rows()).with_clamp_epsilon(clamp_epsilon);
        for (j, name) in names.iter().enumerate() {
            t.push(name, &values.column(j))?;
        }
        Ok(t)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn num_classes(&self) -> usize {
        self.values.rows()
    }

    pub fn num_attributes(&self) -> usize {
        self.values.cols()
    }

    pub fn clamp_epsilon(&self) -> f64 {
        self.clamp_epsilon
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.values.column(j))
    }

    /// Replace the values of an existing column (used when difficulty is
    /// re-measured during training).
    pub fn replace(&mut self, name: &str, column: &[f64]) -> Result<()> {
        let j = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid("attribute", alloc::format!("no column named {name}")))?;
        if column.len() != self.num_classes() {
            return Err(Error::DimensionMismatch {
                what: "attribute column",
                expected: self.num_classes(),
                found: column.len(),
            });
        }
        for (i, &v) in column.iter().enumerate() {
            self.values[(i, j)] = v;
        }
        Ok(())
    }
}

/// Class frequencies `counts_k / Σ counts`.
pub fn freq_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("counts", "all class counts are zero"));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Class-conditional errors clamped to `[eps, 1]`.
pub fn diff_from_errors(errs: &ClassErrorVector, eps: f64) -> Result<Vec<f64>> {
    Ok(errs.defined()?.into_iter().map(|e| e.clamp(eps, 1.0)).collect())
}

/// Euclidean norm of each class row of the final layer, clamped below by `eps`.
pub fn norm_from_classifier(classifier_rows: &Matrix, eps: f64) -> Result<Vec<f64>> {
    if let Some(i) = classifier_rows.first_non_finite_row() {
        return Err(Error::NonFinite {
            what: "classifier row",
            index: i,
        });
    }
    Ok(classifier_rows.iter_rows().map(|r| math::norm2(r).max(eps)).collect())
}

/// Test-time class weights; positive and summing to `K`.
pub fn weights_attribute(test_weights: &[f64], eps: f64) -> Result<Vec<f64>> {
    if let Some(i) = test_weights.iter().position(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::invalid(
            "test weights",
            alloc::format!("weight {i} is not a positive finite number"),
        ));
    }
    let k = test_weights.len() as f64;
    let s: f64 = test_weights.iter().sum();
    if (s - k).abs() > 1e-6 {
        return Err(Error::invalid("test weights", alloc::format!("sum {s} differs from K = {k}")));
    }
    Ok(test_weights.iter().map(|&w| w.max(eps)).collect())
}

/// Per-class label-flip ratios in `[0, 0.5]`, clamped below by `eps`.
pub fn noise_attribute(flip_ratios: &[f64], eps: f64) -> Result<Vec<f64>> {
    if let Some(i) = flip_ratios.iter().position(|r| !(0.0..=0.5).contains(r)) {
        return Err(Error::invalid(
            "noise ratio",
            alloc::format!("ratio {i} = {} is outside [0, 0.5]", flip_ratios[i]),
        ));
    }
    Ok(flip_ratios.iter().map(|&r| r.max(eps)).collect())
}

/// One-hot attributes: the `K × K` identity.
pub fn identity_attribute(k: usize) -> Matrix {
    Matrix::identity(k)
}
