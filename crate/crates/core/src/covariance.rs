//! Lagged second-moment estimators.
//!
//! * [`fit_sieve`] computes the sieve coefficient blocks
//!   `C_{j,k} = (1/n) sum_{i=1}^{n-k} X_{i+k} X_i^T B_j(i/n)`.
//! * [`SieveModel::m_hat`] reconstructs the local lag-`k` covariance
//!   `M(t,k) = sum_j C_{j,k} B_j(t)`, and [`SieveModel::lambda_hat`] forms
//!   `Lambda(t) = sum_{k<=k0} M(t,k) M(t,k)^T`.
//! * [`local_pca_lambda`] is the moving-window baseline and [`gamma_hat`]
//!   the full-sample (static loading) counterpart.
//!
//! The sum over `i` stops at `n - k` so no observation beyond the sample is
//! touched; the divisor stays `n`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::panel::PanelSeries;

/// A symmetric positive semi-definite `p x p` matrix attached to time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalQuadForm {
    pub t: f64,
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SieveModel {
    spec: BasisSpec,
    k0: usize,
    n: usize,
    p: usize,
    /// `coeffs[k-1][j-1]` holds `C_{j,k}`.
    coeffs: Vec<Vec<DMatrix<f64>>>,
}

/// `sum_{i=1}^{n-k} w_i X_{i+k} X_i^T` over the given 1-based row range of
/// lagged indices `i`.
pub(crate) fn weighted_lag_product(
    x: &DMatrix<f64>,
    k: usize,
    first: usize,
    last: usize,
    weights: Option<&[f64]>,
) -> DMatrix<f64> {
    let p = x.ncols();
    if last < first {
        return DMatrix::zeros(p, p);
    }
    let len = last - first + 1;
    let lead = x.rows(first - 1 + k, len);
    let mut lag = x.rows(first - 1, len).into_owned();
    if let Some(w) = weights {
        for (mut row, &wi) in lag.row_iter_mut().zip(w) {
            row *= wi;
        }
    }
    lead.tr_mul(&lag)
}

fn check_lag(op: &'static str, n: usize, k0: usize) -> Result<()> {
    if k0 == 0 {
        return Err(Error::invalid(op, "k0 must be at least 1"));
    }
    if 2 * k0 >= n {
        return Err(Error::invalid(op, format!("k0 = {k0} must be below n/2 = {}", n as f64 / 2.0)));
    }
    Ok(())
}

/// Computes every coefficient block `C_{j,k}` for `j <= J`, `k <= k0`.
pub fn fit_sieve(x: &PanelSeries, spec: BasisSpec, k0: usize) -> Result<SieveModel> {
    let n = x.n();
    check_lag("covariance-estimators.fit_sieve", n, k0)?;
    let order = spec.order();
    let nf = n as f64;
    // basis[j][i-1] = B_j(i/n) / n
    let basis: Vec<Vec<f64>> = {
        let rows: Vec<Vec<f64>> = (1..=n).map(|i| spec.values_at(i as f64 / nf)).collect();
        (0..order)
            .map(|j| rows.iter().map(|r| r[j] / nf).collect())
            .collect()
    };
    let pairs: Vec<(usize, usize)> = (1..=k0)
        .flat_map(|k| (0..order).map(move |j| (k, j)))
        .collect();
    let blocks: Vec<DMatrix<f64>> = pairs
        .par_iter()
        .map(|&(k, j)| weighted_lag_product(x.values(), k, 1, n - k, Some(&basis[j][..n - k])))
        .collect();
    let mut coeffs = vec![Vec::with_capacity(order); k0];
    for ((k, _), block) in pairs.into_iter().zip(blocks) {
        coeffs[k - 1].push(block);
    }
    Ok(SieveModel {
        spec,
        k0,
        n,
        p: x.p(),
        coeffs,
    })
}

impl SieveModel {
    pub fn spec(&self) -> BasisSpec {
        self.spec
    }

    pub fn k0(&self) -> usize {
        self.k0
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Coefficient block `C_{j,k}` (both 1-based).
    pub fn coeff(&self, j: usize, k: usize) -> &DMatrix<f64> {
        &self.coeffs[k - 1][j - 1]
    }

    /// The same fit with the basis truncated to a lower order. The blocks do
    /// not depend on `J`, so nothing is recomputed.
    pub fn truncated(&self, order: usize) -> Result<SieveModel> {
        if order == 0 || order > self.spec.order() {
            return Err(Error::invalid(
                "covariance-estimators.truncated",
                format!("order {order} outside 1..={}", self.spec.order()),
            ));
        }
        Ok(SieveModel {
            spec: BasisSpec::new(self.spec.family(), order)?,
            k0: self.k0,
            n: self.n,
            p: self.p,
            coeffs: self
                .coeffs
                .iter()
                .map(|blocks| blocks[..order].to_vec())
                .collect(),
        })
    }

    fn check_t(op: &'static str, t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(op, format!("t = {t} outside [0, 1]")));
        }
        Ok(())
    }

    /// Sieve reconstruction of the lag-`k` local covariance at `t`.
    pub fn m_hat(&self, t: f64, k: usize) -> Result<DMatrix<f64>> {
        Self::check_t("covariance-estimators.m_hat", t)?;
        if k == 0 || k > self.k0 {
            return Err(Error::invalid(
                "covariance-estimators.m_hat",
                format!("lag {k} outside 1..={}", self.k0),
            ));
        }
        Ok(self.m_hat_with(&self.spec.values_at(t), k))
    }

    fn m_hat_with(&self, basis: &[f64], k: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.p, self.p);
        for (b, block) in basis.iter().zip(&self.coeffs[k - 1]) {
            m += block * *b;
        }
        m
    }

    pub fn lambda_hat(&self, t: f64) -> Result<LocalQuadForm> {
        Self::check_t("covariance-estimators.lambda_hat", t)?;
        let basis = self.spec.values_at(t);
        let lags: Vec<DMatrix<f64>> = (1..=self.k0).map(|k| self.m_hat_with(&basis, k)).collect();
        Ok(LocalQuadForm {
            t,
            matrix: gram_sum(&lags),
        })
    }

    /// `lambda_hat` on every grid point, in grid order.
    pub fn lambda_path(&self, grid: &[f64]) -> Result<Vec<LocalQuadForm>> {
        grid.par_iter().map(|&t| self.lambda_hat(t)).collect()
    }
}

/// `sum_k M_k M_k^T`, assembled from the upper triangle so the result is
/// exactly symmetric.
pub(crate) fn gram_sum(lags: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = lags.first().map_or(0, |m| m.nrows());
    let cols = lags.first().map_or(0, |m| m.ncols());
    // Stack M_k^T vertically: column a of `stacked` is row a of every M_k.
    let mut stacked = DMatrix::zeros(cols * lags.len(), p);
    for (k, m) in lags.iter().enumerate() {
        stacked
            .view_mut((k * cols, 0), (cols, p))
            .copy_from(&m.transpose());
    }
    let mut out = DMatrix::zeros(p, p);
    for a in 0..p {
        let ca = stacked.column(a);
        for b in a..p {
            let v = ca.dot(&stacked.column(b));
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// Moving-window estimate of `Lambda(i/n)`:
/// `M(i/n,k) = (1/#W) sum_{j in W} X_{j+k} X_j^T` with
/// `W = [i-m, i+m]` clipped to `1 <= j <= n-k`.
pub fn local_pca_lambda(x: &PanelSeries, i: usize, m: usize, k0: usize) -> Result<LocalQuadForm> {
    let n = x.n();
    check_local_args(n, i, m, k0)?;
    let lags: Vec<DMatrix<f64>> = (1..=k0)
        .map(|k| {
            let (lo, hi) = local_window(n, i, m, k);
            let count = (hi + 1).saturating_sub(lo).max(1) as f64;
            weighted_lag_product(x.values(), k, lo, hi, None) / count
        })
        .collect();
    Ok(LocalQuadForm {
        t: x.time(i),
        matrix: gram_sum(&lags),
    })
}

fn check_local_args(n: usize, i: usize, m: usize, k0: usize) -> Result<()> {
    const OP: &str = "covariance-estimators.local_pca_lambda";
    check_lag(OP, n, k0)?;
    if m == 0 || 2 * m >= n {
        return Err(Error::invalid(OP, format!("half-window m = {m} must satisfy 1 <= m < n/2")));
    }
    if i == 0 || i > n {
        return Err(Error::invalid(OP, format!("time index {i} outside 1..={n}")));
    }
    Ok(())
}

fn local_window(n: usize, i: usize, m: usize, k: usize) -> (usize, usize) {
    let lo = i.saturating_sub(m).max(1);
    let hi = (i + m).min(n - k);
    (lo, hi)
}

/// Local-PCA estimates at every `i = 1..n`, using running window sums.
pub fn local_pca_path(x: &PanelSeries, m: usize, k0: usize) -> Result<Vec<LocalQuadForm>> {
    let n = x.n();
    let p = x.p();
    check_local_args(n, 1, m, k0)?;
    let values = x.values();
    let rows: Vec<DVector<f64>> = (1..=n).map(|i| x.observation(i)).collect();
    let mut sums: Vec<DMatrix<f64>> = vec![DMatrix::zeros(p, p); k0];
    let mut bounds: Vec<(usize, usize)> = vec![(1, 0); k0];
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        let mut lags = Vec::with_capacity(k0);
        for k in 1..=k0 {
            let (lo, hi) = local_window(n, i, m, k);
            let (cur_lo, cur_hi) = bounds[k - 1];
            let s = &mut sums[k - 1];
            if i == 1 {
                *s = weighted_lag_product(values, k, lo, hi, None);
            } else {
                for j in cur_lo..lo {
                    s.ger(-1.0, &rows[j + k - 1], &rows[j - 1], 1.0);
                }
                for j in (cur_hi + 1)..=hi {
                    s.ger(1.0, &rows[j + k - 1], &rows[j - 1], 1.0);
                }
            }
            bounds[k - 1] = (lo, hi);
            let count = (hi + 1).saturating_sub(lo).max(1) as f64;
            lags.push(&*s / count);
        }
        out.push(LocalQuadForm {
            t: x.time(i),
            matrix: gram_sum(&lags),
        });
    }
    Ok(out)
}

/// Full-sample lag products `S_k = (1/n) sum_{i=1}^{n-k} X_{i+k} X_i^T`.
pub fn lag_moments(x: &PanelSeries, k0: usize) -> Result<Vec<DMatrix<f64>>> {
    let n = x.n();
    check_lag("covariance-estimators.gamma_hat", n, k0)?;
    let w = vec![1.0 / n as f64; n];
    Ok((1..=k0)
        .map(|k| weighted_lag_product(x.values(), k, 1, n - k, Some(&w[..n - k])))
        .collect())
}

/// `Gamma = sum_{k<=k0} S_k S_k^T`.
pub fn gamma_hat(x: &PanelSeries, k0: usize) -> Result<LocalQuadForm> {
    let lags = lag_moments(x, k0)?;
    Ok(LocalQuadForm {
        t: 1.0,
        matrix: gram_sum(&lags),
    })
}
