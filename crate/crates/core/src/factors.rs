//! Eigen-analysis of the local quadratic form: span of the loadings,
//! eigen-ratio factor count with its search bound, stable intervals and
//! explained variance.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::SieveModel;
use crate::error::{Error, Result};

/// Eigenpairs sorted by decreasing eigenvalue. In every eigenvector the entry
/// of largest magnitude (first one on ties) is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(s: &DMatrix<f64>) -> Result<EigenSystem> {
    const OP: &str = "factor-structure.sym_eigen";
    if !s.is_square() {
        return Err(Error::invalid(OP, "matrix is not square"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: OP });
    }
    let p = s.nrows();
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..p).collect();
    // stable sort keeps the solver's order among exact ties
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        if col[col.iamax()] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(EigenSystem { values, vectors })
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Eigenvalues with round-off negatives set to zero.
    pub fn clipped_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.max(0.0)).collect()
    }
}

/// The threshold rule bounding the eigen-ratio search:
/// `lambda_R / sqrt(sum lambda^2) >= c0 * eta / ln n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorCountRule {
    pub c0: f64,
    pub eta: f64,
}

impl Default for FactorCountRule {
    fn default() -> Self {
        Self { c0: 1.0, eta: 1.0 }
    }
}

impl FactorCountRule {
    /// Setting for scans where the factor count may change over time:
    /// `eta = 1 / ln^4 n`.
    pub fn change_point_scan(n: usize) -> Self {
        Self {
            c0: 1.0,
            eta: (n as f64).ln().powi(-4),
        }
    }

    pub fn threshold(&self, n: usize) -> f64 {
        self.c0 * self.eta / (n as f64).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorCount {
    pub d_hat: usize,
    pub search_bound: usize,
}

/// Eigen-ratio estimate of the number of factors from a decreasing spectrum.
pub fn estimate_num_factors(
    eigenvalues: &[f64],
    n: usize,
    rule: FactorCountRule,
) -> Result<FactorCount> {
    const OP: &str = "factor-structure.estimate_num_factors";
    let p = eigenvalues.len();
    if p < 2 {
        return Err(Error::invalid(OP, "need at least two eigenvalues"));
    }
    if n < 2 {
        return Err(Error::invalid(OP, "sample size must be at least 2"));
    }
    let lambda: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let norm = lambda.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::NoFactorStructure { op: OP });
    }
    let cap = (p - 1).min(n / 2).max(1);
    let threshold = rule.threshold(n);
    let search_bound = (1..=cap)
        .rev()
        .find(|&r| lambda[r - 1] / norm >= threshold)
        .unwrap_or(1);
    let mut best = (1, f64::INFINITY);
    for i in 1..=search_bound {
        let ratio = if lambda[i - 1] > 0.0 {
            lambda[i] / lambda[i - 1]
        } else {
            f64::INFINITY
        };
        if ratio < best.1 {
            best = (i, ratio);
        }
    }
    Ok(FactorCount {
        d_hat: best.0,
        search_bound,
    })
}

/// Leading `d` eigenvectors as a `p x d` matrix.
pub fn span_estimate(eig: &EigenSystem, d: usize) -> Result<DMatrix<f64>> {
    if d == 0 || d > eig.dim() {
        return Err(Error::invalid(
            "factor-structure.span_estimate",
            format!("d = {d} outside 1..={}", eig.dim()),
        ));
    }
    Ok(eig.vectors.columns(0, d).into_owned())
}

/// Share of the total eigenvalue mass carried by the leading `d` eigenvalues.
pub fn explained_variance(eig: &EigenSystem, d: usize) -> Result<f64> {
    const OP: &str = "factor-structure.explained_variance";
    let values = eig.clipped_values();
    if d == 0 || d > values.len() {
        return Err(Error::invalid(OP, format!("d = {d} outside 1..={}", values.len())));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid(OP, "total eigenvalue mass is zero"));
    }
    let lead: f64 = values[..d].iter().sum();
    Ok((lead / total).clamp(0.0, 1.0))
}

/// Closed intervals of `[0, 1]` left after removing `(c - r, c + r)` around
/// every change point `c` of the factor-count path, with `r = 1 / ln^2 n`.
/// A change point is the midpoint of two adjacent grid times whose counts
/// differ.
pub fn stable_intervals(d_path: &[(f64, usize)], n: usize) -> Vec<(f64, f64)> {
    let radius = (n as f64).ln().powi(-2);
    let mut excised: Vec<(f64, f64)> = Vec::new();
    for pair in d_path.windows(2) {
        let ((t0, d0), (t1, d1)) = (pair[0], pair[1]);
        if d0 != d1 {
            let c = 0.5 * (t0 + t1);
            let (lo, hi) = (c - radius, c + radius);
            match excised.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => excised.push((lo, hi)),
            }
        }
    }
    let mut out = Vec::new();
    let mut start = 0.0;
    for (lo, hi) in excised {
        if lo > start {
            out.push((start, lo.min(1.0)));
        }
        start = start.max(hi);
        if start >= 1.0 {
            break;
        }
    }
    if start < 1.0 {
        out.push((start, 1.0));
    }
    out
}

pub fn in_intervals(t: f64, intervals: &[(f64, f64)]) -> bool {
    intervals.iter().any(|&(a, b)| a <= t && t <= b)
}

/// Per-time output of [`analyze`].
#[derive(Debug, Clone)]
pub struct FactorRecord {
    pub t: f64,
    pub eigen: EigenSystem,
    pub count: FactorCount,
    pub explained: f64,
}

impl FactorRecord {
    pub fn d_hat(&self) -> usize {
        self.count.d_hat
    }

    pub fn span(&self) -> DMatrix<f64> {
        self.eigen.vectors.columns(0, self.count.d_hat).into_owned()
    }
}

#[derive(Debug, Clone)]
pub struct FactorStructure {
    pub n: usize,
    pub records: Vec<FactorRecord>,
}

impl FactorStructure {
    pub fn d_path(&self) -> Vec<(f64, usize)> {
        self.records.iter().map(|r| (r.t, r.d_hat())).collect()
    }

    pub fn d_max(&self) -> usize {
        self.records.iter().map(FactorRecord::d_hat).max().unwrap_or(0)
    }

    pub fn stable_intervals(&self) -> Vec<(f64, f64)> {
        stable_intervals(&self.d_path(), self.n)
    }
}

/// Eigen-analysis of `Lambda(t)` on every grid time.
pub fn analyze(model: &SieveModel, grid: &[f64], rule: FactorCountRule) -> Result<FactorStructure> {
    let records = grid
        .par_iter()
        .map(|&t| {
            let lam = model.lambda_hat(t)?;
            let eigen = sym_eigen(&lam.matrix)?;
            let count = estimate_num_factors(&eigen.values, model.n(), rule)?;
            let explained = explained_variance(&eigen, count.d_hat)?;
            Ok(FactorRecord {
                t,
                eigen,
                count,
                explained,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FactorStructure {
        n: model.n(),
        records,
    })
}
