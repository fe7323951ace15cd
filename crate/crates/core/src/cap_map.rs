//! Attribute-to-hyperparameter map.
//!
//! A [`BasisSet`] expands every attribute value into `m` features; stacking the
//! expansions of all `n` attributes gives row `k` of the `K × M` feature
//! dictionary (`M = m·n`). Three weight rows then produce the per-class
//! strategy vectors:
//!
//! ```text
//! omega = D w_omega
//! l     = D w_l
//! delta = sigmoid( sqrt(K) · D w_delta / ‖D w_delta‖ )
//! ```
//!
//! A row that is switched off (`None`) yields the neutral value for that
//! strategy: `omega = 1`, `l = 0`, `delta = 1`.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attributes::AttributeTable;
use crate::math::{self, Matrix};
use crate::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.075;

/// Below this norm of `D w_delta` the normalisation is undefined and delta is
/// set to `sigmoid(0) = 0.5` everywhere.
pub const DELTA_DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFunction {
    Log,
    Linear,
    PowBeta,
    #[serde(rename = "pow_2beta")]
    Pow2Beta,
    #[serde(rename = "pow_4beta")]
    Pow4Beta,
    Identity,
}

impl BasisFunction {
    pub fn name(self) -> &'static str {
        match self {
            BasisFunction::Log => "log",
            BasisFunction::Linear => "linear",
            BasisFunction::PowBeta => "pow_beta",
            BasisFunction::Pow2Beta => "pow_2beta",
            BasisFunction::Pow4Beta => "pow_4beta",
            BasisFunction::Identity => "identity",
        }
    }

    /// Evaluate on a raw attribute value. Logarithmic and fractional-power
    /// bases see `max(a, eps)`.
    pub fn eval(self, a: f64, beta: f64, eps: f64) -> f64 {
        let clamped = a.max(eps);
        match self {
            BasisFunction::Log => libm::log(clamped),
            BasisFunction::Linear | BasisFunction::Identity => a,
            BasisFunction::PowBeta => libm::pow(clamped, beta),
            BasisFunction::Pow2Beta => libm::pow(clamped, 2.0 * beta),
            BasisFunction::Pow4Beta => libm::pow(clamped, 4.0 * beta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSet {
    pub functions: Vec<BasisFunction>,
    pub beta: f64,
}

impl Default for BasisSet {
    /// `[log a, a, a^β, a^2β, a^4β]` with `β = 0.075`.
    fn default() -> Self {
        BasisSet {
            functions: vec![
                BasisFunction::Log,
                BasisFunction::Linear,
                BasisFunction::PowBeta,
                BasisFunction::Pow2Beta,
                BasisFunction::Pow4Beta,
            ],
            beta: DEFAULT_BETA,
        }
    }
}

impl BasisSet {
    pub fn single(f: BasisFunction) -> Self {
        BasisSet {
            functions: vec![f],
            beta: DEFAULT_BETA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.functions.is_empty() {
            return Err(Error::invalid("basis", "no basis functions"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDictionary {
    matrix: Matrix,
    attribute_names: Vec<String>,
    basis: Vec<String>,
}

impl FeatureDictionary {
    /// Wrap an explicit dictionary matrix.
    pub fn from_matrix(matrix: Matrix) -> Self {
        let basis = (0..matrix.cols()).map(|j| alloc::format!("col_{j}")).collect();
        FeatureDictionary {
            matrix,
            attribute_names: Vec::new(),
            basis,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.rows()
    }

    pub fn num_features(&self) -> usize {
        self.matrix.cols()
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    /// Column labels, `"<attribute>:<basis>"`.
    pub fn column_labels(&self) -> &[String] {
        &self.basis
    }
}

/// `D[k] = [F(A_k[1]) ‖ … ‖ F(A_k[n])]`, attribute-major.
pub fn build_dictionary(attrs: &AttributeTable, basis: &BasisSet) -> Result<FeatureDictionary> {
    basis.validate()?;
    let k = attrs.num_classes();
    let n = attrs.num_attributes();
    let m = basis.functions.len();
    let eps = attrs.clamp_epsilon();
    if n == 0 {
        return Err(Error::invalid("attributes", "table has no columns"));
    }
    let mut d = Matrix::zeros(k, m * n);
    for class in 0..k {
        for (a_idx, &a) in attrs.values().row(class).iter().enumerate() {
            for (b_idx, f) in basis.functions.iter().enumerate() {
                let v = f.eval(a, basis.beta, eps);
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        what: "dictionary entry",
                        index: class,
                    });
                }
                d[(class, a_idx * m + b_idx)] = v;
            }
        }
    }
    let labels = attrs
        .names()
        .iter()
        .flat_map(|a| basis.functions.iter().map(move |f| alloc::format!("{a}:{}", f.name())))
        .collect();
    Ok(FeatureDictionary {
        matrix: d,
        attribute_names: attrs.names().to_vec(),
        basis: labels,
    })
}

/// Rows of the weight matrix. `None` disables a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapWeights {
    #[serde(default)]
    pub w_omega: Option<Vec<f64>>,
    #[serde(default)]
    pub w_l: Option<Vec<f64>>,
    #[serde(default)]
    pub w_delta: Option<Vec<f64>>,
}

/// Which weight rows take part in an optimisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveRows {
    pub omega: bool,
    pub l: bool,
    pub delta: bool,
}

impl ActiveRows {
    pub const L_ONLY: ActiveRows = ActiveRows {
        omega: false,
        l: true,
        delta: false,
    };
    pub const DELTA_ONLY: ActiveRows = ActiveRows {
        omega: false,
        l: false,
        delta: true,
    };
    pub const L_AND_DELTA: ActiveRows = ActiveRows {
        omega: false,
        l: true,
        delta: true,
    };
}

impl CapWeights {
    /// Every row switched off: plain cross-entropy strategies.
    pub fn inactive() -> Self {
        CapWeights {
            w_omega: None,
            w_l: None,
            w_delta: None,
        }
    }

    /// Zero rows of length `m` for the active rows.
    pub fn zeros(m: usize, rows: ActiveRows) -> Self {
        let z = || vec![0.0; m];
        CapWeights {
            w_omega: rows.omega.then(z),
            w_l: rows.l.then(z),
            w_delta: rows.delta.then(z),
        }
    }

    pub fn active_rows(&self) -> ActiveRows {
        ActiveRows {
            omega: self.w_omega.is_some(),
            l: self.w_l.is_some(),
            delta: self.w_delta.is_some(),
        }
    }

    fn rows(&self) -> [Option<&Vec<f64>>; 3] {
        [self.w_omega.as_ref(), self.w_l.as_ref(), self.w_delta.as_ref()]
    }

    fn rows_mut(&mut self) -> [Option<&mut Vec<f64>>; 3] {
        [self.w_omega.as_mut(), self.w_l.as_mut(), self.w_delta.as_mut()]
    }

    /// Active rows concatenated in `omega, l, delta` order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.rows().into_iter().flatten().flat_map(|r| r.iter().copied()).collect()
    }

    /// Overwrite the active rows from a flat vector laid out as [`Self::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.rows().into_iter().flatten().map(Vec::len).sum();
        if flat.len() != total {
            return Err(Error::DimensionMismatch {
                what: "flat weights",
                expected: total,
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for row in self.rows_mut().into_iter().flatten() {
            let len = row.len();
            row.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.rows().into_iter().flatten().map(Vec::len).sum()
    }

    fn check(&self, m: usize) -> Result<()> {
        for row in self.rows().into_iter().flatten() {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "weight row",
                    expected: m,
                    found: row.len(),
                });
            }
            if let Some(i) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "weight row",
                    index: i,
                });
            }
        }
        Ok(())
    }
}

/// Per-class `(omega, l, delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyVectors {
    pub omega: Vec<f64>,
    pub l: Vec<f64>,
    pub delta: Vec<f64>,
}

impl StrategyVectors {
    /// Plain cross-entropy: `omega = 1`, `l = 0`, `delta = 1`.
    pub fn plain(k: usize) -> Self {
        StrategyVectors {
            omega: vec![1.0; k],
            l: vec![0.0; k],
            delta: vec![1.0; k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        for (what, v) in [("omega", &self.omega), ("l", &self.l), ("delta", &self.delta)] {
            if v.len() != k {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: k,
                    found: v.len(),
                });
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { what, index: i });
            }
        }
        Ok(())
    }
}

/// Gradient (or cotangent) with respect to a [`StrategyVectors`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyGrad {
    pub omega: Vec<f64>,
    pub l: Vec<f64>,
    pub delta: Vec<f64>,
}

impl StrategyGrad {
    pub fn zeros(k: usize) -> Self {
        StrategyGrad {
            omega: vec![0.0; k],
            l: vec![0.0; k],
            delta: vec![0.0; k],
        }
    }

    pub fn add_scaled(&mut self, other: &StrategyGrad, c: f64) {
        for (a, b) in [
            (&mut self.omega, &other.omega),
            (&mut self.l, &other.l),
            (&mut self.delta, &other.delta),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
    }
}

fn delta_pre_activation(u: &[f64]) -> Option<(Vec<f64>, f64)> {
    let norm = math::norm2(u);
    if norm < DELTA_DEGENERATE_NORM {
        return None;
    }
    let scale = libm::sqrt(u.len() as f64) / norm;
    Some((u.iter().map(|x| x * scale).collect(), norm))
}

pub fn strategies_from_weights(d: &FeatureDictionary, w: &CapWeights) -> Result<StrategyVectors> {
    let k = d.num_classes();
    w.check(d.num_features())?;
    let dm = d.matrix();
    let omega = match &w.w_omega {
        Some(row) => dm.mul_vec(row)?,
        None => vec![1.0; k],
    };
    let l = match &w.w_l {
        Some(row) => dm.mul_vec(row)?,
        None => vec![0.0; k],
    };
    let delta = match &w.w_delta {
        Some(row) => {
            let u = dm.mul_vec(row)?;
            match delta_pre_activation(&u) {
                Some((z, _)) => z.into_iter().map(math::sigmoid).collect(),
                None => vec![0.5; k],
            }
        }
        None => vec![1.0; k],
    };
    Ok(StrategyVectors { omega, l, delta })
}

/// Pull a strategy cotangent back to the weight rows.
///
/// Inactive rows stay `None`. At the degenerate point `‖D w_delta‖ < 1e-12`
/// the delta branch contributes zero.
pub fn strategies_vjp(d: &FeatureDictionary, w: &CapWeights, upstream: &StrategyGrad) -> Result<CapWeights> {
    let k = d.num_classes();
    w.check(d.num_features())?;
    for (what, v) in [
        ("omega cotangent", &upstream.omega),
        ("l cotangent", &upstream.l),
        ("delta cotangent", &upstream.delta),
    ] {
        if v.len() != k {
            return Err(Error::DimensionMismatch {
                what,
                expected: k,
                found: v.len(),
            });
        }
    }
    let dm = d.matrix();
    let g_omega = match &w.w_omega {
        Some(_) => Some(dm.tr_mul_vec(&upstream.omega)?),
        None => None,
    };
    let g_l = match &w.w_l {
        Some(_) => Some(dm.tr_mul_vec(&upstream.l)?),
        None => None,
    };
    let g_delta = match &w.w_delta {
        Some(row) => {
            let u = dm.mul_vec(row)?;
            match delta_pre_activation(&u) {
                None => Some(vec![0.0; d.num_features()]),
                Some((z, norm)) => {
                    // dΔ/dz = σ(1-σ); dz/du = sqrt(K) (I/‖u‖ - u uᵀ/‖u‖³)
                    let gz: Vec<f64> = z
                        .iter()
                        .zip(&upstream.delta)
                        .map(|(&zi, &g)| {
                            let s = math::sigmoid(zi);
                            g * s * (1.0 - s)
                        })
                        .collect();
                    let sqrt_k = libm::sqrt(k as f64);
                    let u_dot_gz = math::dot(&u, &gz);
                    let gu: Vec<f64> = u
                        .iter()
                        .zip(&gz)
                        .map(|(&ui, &gi)| sqrt_k * (gi / norm - ui * u_dot_gz / (norm * norm * norm)))
                        .collect();
                    Some(dm.tr_mul_vec(&gu)?)
                }
            }
        }
        None => None,
    };
    Ok(CapWeights {
        w_omega: g_omega,
        w_l: g_l,
        w_delta: g_delta,
    })
}

/// Starting `w_delta` whose image `D w` is closest to a constant vector
/// (ridge least squares against `1`). `w_delta = 0` is a stationary point of
/// the normalised sigmoid map, so optimisers start here instead. The scale is
/// irrelevant because the map is scale invariant.
pub fn uniform_delta_init(d: &FeatureDictionary) -> Vec<f64> {
    let dm = d.matrix();
    let m = dm.cols();
    let ones = vec![1.0; dm.rows()];
    let rhs = dm.tr_mul_vec(&ones).unwrap_or_else(|_| vec![0.0; m]);
    let mut gram = Matrix::zeros(m, m);
    for row in dm.iter_rows() {
        for i in 0..m {
            for j in 0..m {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    let trace: f64 = (0..m).map(|i| gram[(i, i)]).sum();
    let ridge = 1e-10 * (trace / m.max(1) as f64).max(f64::MIN_POSITIVE);
    for i in 0..m {
        gram[(i, i)] += ridge;
    }
    let w = math::solve_linear(&gram, &rhs).unwrap_or_else(|| rhs.clone());
    let norm = math::norm2(&w);
    if norm.is_finite() && norm > 0.0 {
        w.iter().map(|x| x / norm).collect()
    } else {
        rhs
    }
}

/// Sign convention for logit-adjustment baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaSign {
    /// `l_k = γ log π_k`: inside the loss this enlarges minority margins, and
    /// as a post-hoc subtraction it boosts minority logits.
    #[default]
    LossConsistent,
    /// `l_k = -γ log π_k`, the literal textual form.
    Flipped,
}

/// Logit-adjustment strategies: `l = ±γ log π`, `delta = 1`, `omega = 1`.
pub fn la_strategies(pi: &[f64], gamma: f64, sign: LaSign) -> StrategyVectors {
    let s = match sign {
        LaSign::LossConsistent => 1.0,
        LaSign::Flipped => -1.0,
    };
    StrategyVectors {
        omega: vec![1.0; pi.len()],
        l: pi.iter().map(|&p| s * gamma * libm::log(p)).collect(),
        delta: vec![1.0; pi.len()],
    }
}

/// CDT strategies: `delta = π^γ`, `l = 0`, `omega = 1`.
pub fn cdt_strategies(pi: &[f64], gamma: f64) -> StrategyVectors {
    StrategyVectors {
        omega: vec![1.0; pi.len()],
        l: vec![0.0; pi.len()],
        delta: pi.iter().map(|&p| libm::pow(p, gamma)).collect(),
    }
}

/// Label for the basis set used in dictionary provenance and outputs.
pub fn basis_descriptor(basis: &BasisSet) -> Vec<String> {
    basis.functions.iter().map(|f| f.name().to_string()).collect()
}
