//! One-step-ahead forecasting: factor extraction from the sieve eigenvectors,
//! autoregressive factor forecasts and prediction-error evaluation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::SieveModel;
use crate::error::{Error, Result};
use crate::factors::{estimate_num_factors, sym_eigen, FactorCountRule};
use crate::panel::PanelSeries;

/// Shortest factor history an autoregression is fitted on.
pub const MIN_HISTORY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub d_max: usize,
    pub ar_order_max: usize,
    /// First forecast origin `j`: `X_{j+1}` is the first predicted row.
    pub eval_start: usize,
    pub count_rule: FactorCountRule,
}

impl ForecastConfig {
    pub fn new(d_max: usize, eval_start: usize) -> Self {
        Self {
            d_max,
            ar_order_max: 6,
            eval_start,
            count_rule: FactorCountRule::default(),
        }
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        const OP: &str = "forecast.config";
        if self.d_max == 0 || self.d_max > p {
            return Err(Error::invalid(OP, format!("d_max = {} outside 1..={p}", self.d_max)));
        }
        if self.eval_start < MIN_HISTORY {
            return Err(Error::invalid(
                OP,
                format!("eval_start = {} leaves less than {MIN_HISTORY} observations of history", self.eval_start),
            ));
        }
        if self.eval_start >= n {
            return Err(Error::invalid(OP, format!("eval_start = {} leaves nothing to predict (n = {n})", self.eval_start)));
        }
        Ok(())
    }
}

/// Estimated factor series with the loadings that produced them.
#[derive(Debug, Clone)]
pub struct FactorPanel {
    /// `n x d_max`; row `i-1` is `z_i = A(i/n)^T X_i`.
    pub factors: DMatrix<f64>,
    /// `p x d_max` leading eigenvectors of `Lambda(i/n)`, sign-aligned over
    /// time.
    pub loadings: Vec<DMatrix<f64>>,
    /// Estimated factor count at every `i/n`.
    pub d_path: Vec<usize>,
}

/// Leading `d_max` eigenvectors of the sieve form at every `i/n`. Each column
/// is flipped when it points away from the same column one step earlier, so
/// the factor series do not change sign arbitrarily.
pub fn extract_factors(x: &PanelSeries, model: &SieveModel, d_max: usize, rule: FactorCountRule) -> Result<FactorPanel> {
    const OP: &str = "forecast.extract_factors";
    let (n, p) = (x.n(), x.p());
    if d_max == 0 || d_max > p {
        return Err(Error::invalid(OP, format!("d_max = {d_max} outside 1..={p}")));
    }
    if model.p() != p || model.n() != n {
        return Err(Error::invalid(OP, "model was fitted on a panel of another shape"));
    }
    let per_time: Vec<(DMatrix<f64>, usize)> = model
        .lambda_path(&x.time_grid())?
        .par_iter()
        .map(|form| {
            let eig = sym_eigen(&form.matrix)?;
            let d = match estimate_num_factors(&eig.values, n, rule) {
                Ok(c) => c.d_hat,
                // a zero form carries no factors at all
                Err(Error::NoFactorStructure { .. }) => 0,
                Err(e) => return Err(e),
            };
            Ok((eig.vectors.columns(0, d_max).into_owned(), d))
        })
        .collect::<Result<_>>()?;
    let (mut loadings, d_path): (Vec<DMatrix<f64>>, Vec<usize>) = per_time.into_iter().unzip();
    for i in 1..n {
        let (done, rest) = loadings.split_at_mut(i);
        let prev = &done[i - 1];
        for c in 0..d_max {
            if prev.column(c).dot(&rest[0].column(c)) < 0.0 {
                rest[0].column_mut(c).neg_mut();
            }
        }
    }
    let mut factors = DMatrix::zeros(n, d_max);
    for i in 1..=n {
        let z = loadings[i - 1].transpose() * x.observation(i);
        factors.row_mut(i - 1).copy_from(&z.transpose());
    }
    Ok(FactorPanel { factors, loadings, d_path })
}

/// Least-squares autoregression with intercept, order chosen by AIC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArFit {
    pub order: usize,
    pub intercept: f64,
    /// Coefficients of lags `1..=order`.
    pub coefficients: Vec<f64>,
    pub aic: f64,
    /// Orders skipped because their regressors were collinear.
    pub singular_orders: Vec<usize>,
}

impl ArFit {
    /// Forecast of the value following `history`.
    pub fn predict(&self, history: &[f64]) -> f64 {
        let t = history.len();
        self.intercept
            + self
                .coefficients
                .iter()
                .enumerate()
                .map(|(l, c)| c * history[t - 1 - l])
                .sum::<f64>()
    }
}

const RANK_TOL: f64 = 1e-10;

/// Fits AR(q) with intercept for `q = 0..=max_order` on the common sample
/// `t = max_order+1..=T` and keeps the smallest AIC
/// `T_eff ln(RSS / T_eff) + 2 (q + 1)`; the first order wins ties. Orders
/// whose design matrix is rank deficient are skipped, so a degenerate series
/// falls back to `q = 0`, the sample mean.
pub fn fit_ar(series: &[f64], max_order: usize) -> Result<ArFit> {
    const OP: &str = "forecast.fit_ar";
    let t = series.len();
    if t < max_order + 2 {
        return Err(Error::invalid(OP, format!("{t} observations cannot support order {max_order}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: OP });
    }
    let rows = t - max_order;
    let y = DVector::from_fn(rows, |r, _| series[max_order + r]);
    let mut best: Option<ArFit> = None;
    let mut singular_orders = Vec::new();
    for q in 0..=max_order {
        let design = DMatrix::from_fn(rows, q + 1, |r, c| if c == 0 { 1.0 } else { series[max_order + r - c] });
        let svd = design.clone().svd(true, true);
        let top = svd.singular_values.max();
        if svd.rank(RANK_TOL * top.max(f64::MIN_POSITIVE)) < q + 1 {
            singular_orders.push(q);
            continue;
        }
        let beta = svd.solve(&y, RANK_TOL * top).map_err(|e| Error::invalid(OP, e))?;
        let rss = (&y - &design * &beta).norm_squared();
        let aic = rows as f64 * (rss / rows as f64).ln() + 2.0 * (q + 1) as f64;
        if best.as_ref().map_or(true, |b| aic < b.aic) {
            best = Some(ArFit {
                order: q,
                intercept: beta[0],
                coefficients: beta.iter().skip(1).copied().collect(),
                aic,
                singular_orders: Vec::new(),
            });
        }
    }
    let mut fit = best.ok_or_else(|| Error::invalid(OP, "every order is singular"))?;
    fit.singular_orders = singular_orders;
    Ok(fit)
}

/// Forecast of `X_{i+1}` from the first `i` rows:
/// `A(i/n) J z_pred`, where `z_pred` holds the AR forecasts of the factor
/// coordinates and `J` keeps the first `d_hat(i/n)` of them.
pub fn predict_next(panel: &FactorPanel, cfg: &ForecastConfig, i: usize) -> Result<DVector<f64>> {
    let n = panel.factors.nrows();
    if i < MIN_HISTORY || i > n {
        return Err(Error::invalid(
            "forecast.predict_next",
            format!("origin {i} outside {MIN_HISTORY}..={n}"),
        ));
    }
    let a = &panel.loadings[i - 1];
    let keep = panel.d_path[i - 1].min(cfg.d_max);
    let mut z = DVector::zeros(cfg.d_max);
    for c in 0..keep {
        let history: Vec<f64> = panel.factors.column(c).rows(0, i).iter().copied().collect();
        z[c] = fit_ar(&history, cfg.ar_order_max)?.predict(&history);
    }
    Ok(a * z)
}

/// `sum_s |pred_s - actual_s|^2 / (p * count)`.
pub fn mspe(predictions: &[DVector<f64>], actuals: &[DVector<f64>]) -> Result<f64> {
    const OP: &str = "forecast.mspe";
    if predictions.len() != actuals.len() || predictions.is_empty() {
        return Err(Error::invalid(
            OP,
            format!("{} predictions against {} actual rows", predictions.len(), actuals.len()),
        ));
    }
    let p = actuals[0].len();
    let mut total = 0.0;
    for (a, b) in predictions.iter().zip(actuals) {
        if a.len() != p || b.len() != p {
            return Err(Error::invalid(OP, "rows of unequal length"));
        }
        total += (a - b).norm_squared();
    }
    Ok(total / (p * predictions.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginError {
    pub origin: usize,
    /// `|pred - X_{origin+1}|^2 / p` for the factor forecast.
    pub error: f64,
    /// The same for the previous-value benchmark `X_origin`.
    pub benchmark_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub mspe: f64,
    pub benchmark_mspe: f64,
    pub d_max: usize,
    pub origins: Vec<OriginError>,
}

/// Rolling one-step forecasts from every origin `eval_start..n-1`, compared
/// against carrying the current row forward.
pub fn evaluate(x: &PanelSeries, panel: &FactorPanel, cfg: &ForecastConfig) -> Result<ForecastReport> {
    let (n, p) = (x.n(), x.p());
    cfg.validate(n, p)?;
    if panel.factors.nrows() != n || panel.factors.ncols() < cfg.d_max {
        return Err(Error::invalid("forecast.evaluate", "factor panel does not match the data"));
    }
    let origins: Vec<usize> = (cfg.eval_start..n).collect();
    let preds: Vec<DVector<f64>> = origins.par_iter().map(|&i| predict_next(panel, cfg, i)).collect::<Result<_>>()?;
    let actual: Vec<DVector<f64>> = origins.iter().map(|&i| x.observation(i + 1)).collect();
    let naive: Vec<DVector<f64>> = origins.iter().map(|&i| x.observation(i)).collect();
    let per_origin = origins
        .iter()
        .enumerate()
        .map(|(k, &origin)| OriginError {
            origin,
            error: (&preds[k] - &actual[k]).norm_squared() / p as f64,
            benchmark_error: (&naive[k] - &actual[k]).norm_squared() / p as f64,
        })
        .collect();
    Ok(ForecastReport {
        mspe: mspe(&preds, &actual)?,
        benchmark_mspe: mspe(&naive, &actual)?,
        d_max: cfg.d_max,
        origins: per_origin,
    })
}
