//! Named estimator and test configurations run once per replicate by the
//! Monte-Carlo harness.

use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, BasisSpec};
use crate::covariance::{fit_sieve, gamma_hat, local_pca_path, LocalQuadForm};
use crate::error::{Error, Result};
use crate::forecast::{evaluate, extract_factors, ForecastConfig};
use crate::factors::{estimate_num_factors, in_intervals, stable_intervals, sym_eigen, EigenSystem, FactorCountRule};
use crate::panel::PanelSeries;
use crate::sim::designs::{replicate_rng, SimulationTruth};
use crate::sim::metrics::{mean_angle, rmse_metric};
use crate::sim::ReplicateOutcome;
use crate::static_test::{p_value, rejects, TestConfig};
use crate::tuning::{cv_select_jn, mv_select_local_window, select_and_test, TuningGrid, WindowChoice};

/// How the sieve order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderChoice {
    Fixed(usize),
    CrossValidated(Vec<usize>),
}

impl OrderChoice {
    pub fn cross_validated() -> Self {
        OrderChoice::CrossValidated(TuningGrid::default_orders().candidates)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpanEstimator {
    Sieve { family: BasisFamily, order: OrderChoice },
    /// Moving-window estimate; the half-width is chosen by minimal
    /// volatility over the default grid when not given.
    LocalPca { half_window: Option<usize> },
    /// One full-sample quadratic form for every time.
    Static,
}

impl SpanEstimator {
    /// Metric label; a fixed local-PCA half-width is part of the label.
    pub fn name(&self) -> String {
        match self {
            SpanEstimator::Sieve { .. } => "sieve".into(),
            SpanEstimator::LocalPca { half_window: None } => "local-pca".into(),
            SpanEstimator::LocalPca { half_window: Some(m) } => format!("local-pca-{m}"),
            SpanEstimator::Static => "static".into(),
        }
    }
}

/// Eigen-analysis at `i/n`, `i = 1..=n`, of one estimator.
#[derive(Debug, Clone)]
pub struct SpanFit {
    pub eigen: Vec<EigenSystem>,
    pub d_path: Vec<(f64, usize)>,
    /// Sieve order or local-PCA half-width in use, when there is one.
    pub tuned: Option<usize>,
}

impl SpanFit {
    /// Leading eigenvectors per time: `dims[i]` of them when given, the
    /// estimated count otherwise.
    pub fn spans(&self, dims: Option<&[usize]>) -> Vec<DMatrix<f64>> {
        self.eigen
            .iter()
            .enumerate()
            .map(|(i, eig)| {
                let d = dims.map_or(self.d_path[i].1, |d| d[i]).min(eig.dim());
                eig.vectors.columns(0, d).into_owned()
            })
            .collect()
    }
}

fn analyze_forms(forms: &[LocalQuadForm], n: usize, rule: FactorCountRule, tuned: Option<usize>) -> Result<SpanFit> {
    let per_time: Vec<(EigenSystem, (f64, usize))> = forms
        .par_iter()
        .map(|form| {
            let eig = sym_eigen(&form.matrix)?;
            let d = estimate_num_factors(&eig.values, n, rule)?.d_hat;
            Ok((eig, (form.t, d)))
        })
        .collect::<Result<_>>()?;
    let (eigen, d_path) = per_time.into_iter().unzip();
    Ok(SpanFit { eigen, d_path, tuned })
}

fn cv_order(x: &PanelSeries, candidates: &[usize], k0: usize, family: BasisFamily, rule: FactorCountRule) -> Result<usize> {
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    // the criterion is read pointwise, so no half-width applies
    let grid = TuningGrid { candidates, h: 0 };
    Ok(cv_select_jn(x, &grid, k0, family, rule)?.selected)
}

pub fn fit_spans(x: &PanelSeries, estimator: &SpanEstimator, k0: usize, rule: FactorCountRule) -> Result<SpanFit> {
    let n = x.n();
    match estimator {
        SpanEstimator::Sieve { family, order } => {
            let order = match order {
                OrderChoice::Fixed(j) => *j,
                OrderChoice::CrossValidated(c) => cv_order(x, c, k0, *family, rule)?,
            };
            let model = fit_sieve(x, BasisSpec::new(*family, order)?, k0)?;
            analyze_forms(&model.lambda_path(&x.time_grid())?, n, rule, Some(order))
        }
        SpanEstimator::LocalPca { half_window } => {
            let m = match half_window {
                Some(m) => *m,
                None => mv_select_local_window(x, &TuningGrid::default_local_windows(n)?, k0, rule)?.selected,
            };
            analyze_forms(&local_pca_path(x, m, k0)?, n, rule, Some(m))
        }
        SpanEstimator::Static => {
            let eig = sym_eigen(&gamma_hat(x, k0)?.matrix)?;
            let d = estimate_num_factors(&eig.values, n, rule)?.d_hat;
            Ok(SpanFit {
                eigen: vec![eig; n],
                d_path: (1..=n).map(|i| (x.time(i), d)).collect(),
                tuned: None,
            })
        }
    }
}

/// Share of grid times inside the stable intervals of the estimated path at
/// which the estimated count equals the truth. `None` if no grid time is
/// stable.
pub fn count_recovery(fit: &SpanFit, d_true: &[usize], n: usize) -> Option<f64> {
    let intervals = stable_intervals(&fit.d_path, n);
    let (hits, total) = fit
        .d_path
        .iter()
        .zip(d_true)
        .filter(|((t, _), _)| in_intervals(*t, &intervals))
        .fold((0usize, 0usize), |(h, c), ((_, d), truth)| (h + (d == truth) as usize, c + 1));
    (total > 0).then(|| hits as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pipeline {
    /// RMSE, mean angle and count recovery of every estimator, reported as
    /// `rmse/<name>`, `angle/<name>` and `count_recovery/<name>`. With
    /// `known_dimension` the spans take the true number of columns and the
    /// estimated-count accuracy is added as `rmse_dhat/<name>` and
    /// `angle_dhat/<name>`.
    SpanAccuracy {
        estimators: Vec<SpanEstimator>,
        k0: usize,
        rule: FactorCountRule,
        known_dimension: bool,
    },
    /// Static-loading test decisions `reject@<level>` at every level, with
    /// the block count chosen over `block_grid` and the window over the
    /// default grid when requested.
    StaticTest {
        cfg: TestConfig,
        block_grid: Option<Vec<usize>>,
        tune_window: bool,
        levels: Vec<f64>,
    },
    /// Rolling one-step forecasts through the sieve factors from origin
    /// `eval_start` on, against carrying the last row forward: metrics
    /// `mspe` and `benchmark_mspe`, decision `beats_benchmark`.
    Forecast {
        family: BasisFamily,
        order: OrderChoice,
        k0: usize,
        rule: FactorCountRule,
        ar_order_max: usize,
        eval_start: usize,
    },
}

impl Pipeline {
    pub fn span_accuracy() -> Self {
        Pipeline::SpanAccuracy {
            estimators: vec![
                SpanEstimator::Sieve {
                    family: BasisFamily::Legendre,
                    order: OrderChoice::cross_validated(),
                },
                SpanEstimator::LocalPca { half_window: None },
                SpanEstimator::Static,
            ],
            k0: 3,
            rule: FactorCountRule::default(),
            known_dimension: true,
        }
    }

    /// Count recovery of the sieve estimator with the order cross-validated
    /// over `2..=8`: a single basis function cannot follow a changing count.
    pub fn factor_count_scan() -> Self {
        Pipeline::SpanAccuracy {
            estimators: vec![SpanEstimator::Sieve {
                family: BasisFamily::Legendre,
                order: OrderChoice::CrossValidated((2..=8).collect()),
            }],
            k0: 3,
            rule: FactorCountRule::default(),
            known_dimension: false,
        }
    }

    pub fn tuned_static_test(bootstrap: usize) -> Self {
        Pipeline::StaticTest {
            cfg: TestConfig { bootstrap, ..TestConfig::default() },
            block_grid: Some(TuningGrid::default_blocks().candidates),
            tune_window: true,
            levels: vec![0.05, 0.10],
        }
    }

    pub fn forecast(eval_start: usize) -> Self {
        Pipeline::Forecast {
            family: BasisFamily::Legendre,
            order: OrderChoice::cross_validated(),
            k0: 3,
            rule: FactorCountRule::default(),
            ar_order_max: 6,
            eval_start,
        }
    }

    pub fn run(&self, replicate: usize, truth: &SimulationTruth) -> Result<ReplicateOutcome> {
        match self {
            Pipeline::Forecast { family, order, k0, rule, ar_order_max, eval_start } => {
                let x = &truth.x;
                let order = match order {
                    OrderChoice::Fixed(j) => *j,
                    OrderChoice::CrossValidated(c) => cv_order(x, c, *k0, *family, *rule)?,
                };
                let model = fit_sieve(x, BasisSpec::new(*family, order)?, *k0)?;
                let probe = extract_factors(x, &model, 1, *rule)?;
                let d_max = probe.d_path.iter().copied().max().unwrap_or(1).clamp(1, x.p());
                let panel = if d_max == 1 { probe } else { extract_factors(x, &model, d_max, *rule)? };
                let cfg = ForecastConfig {
                    d_max,
                    ar_order_max: *ar_order_max,
                    eval_start: *eval_start,
                    count_rule: *rule,
                };
                let report = evaluate(x, &panel, &cfg)?;
                Ok(ReplicateOutcome::default()
                    .metric("mspe", report.mspe)
                    .metric("benchmark_mspe", report.benchmark_mspe)
                    .metric("d_max", d_max as f64)
                    .decision("beats_benchmark", report.mspe <= report.benchmark_mspe))
            }
            Pipeline::SpanAccuracy { estimators, k0, rule, known_dimension } => {
                let mut out = ReplicateOutcome::default();
                for est in estimators {
                    let fit = fit_spans(&truth.x, est, *k0, *rule)?;
                    let name = est.name();
                    let estimated = fit.spans(None);
                    if *known_dimension {
                        let spans = fit.spans(Some(&truth.d_true));
                        out = out
                            .metric(format!("rmse/{name}"), rmse_metric(truth, &spans)?)
                            .metric(format!("angle/{name}"), mean_angle(truth, &spans)?)
                            .metric(format!("rmse_dhat/{name}"), rmse_metric(truth, &estimated)?)
                            .metric(format!("angle_dhat/{name}"), mean_angle(truth, &estimated)?);
                    } else {
                        out = out
                            .metric(format!("rmse/{name}"), rmse_metric(truth, &estimated)?)
                            .metric(format!("angle/{name}"), mean_angle(truth, &estimated)?);
                    }
                    if let Some(r) = count_recovery(&fit, &truth.d_true, truth.x.n()) {
                        out = out.metric(format!("count_recovery/{name}"), r);
                    }
                    if let Some(v) = fit.tuned {
                        out = out.metric(format!("tuned/{name}"), v as f64);
                    }
                }
                Ok(out)
            }
            Pipeline::StaticTest { cfg, block_grid, tune_window, levels } => {
                if levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                    return Err(Error::invalid("sim-lab.monte_carlo", "test levels must lie in (0, 1)"));
                }
                let cfg = TestConfig {
                    seed: replicate_rng(cfg.seed, replicate as u64).next_u64(),
                    ..*cfg
                };
                let grid = block_grid.as_ref().map(|c| TuningGrid::new(c.clone(), 1)).transpose()?;
                let window = if *tune_window { WindowChoice::DefaultGrid } else { WindowChoice::Fixed };
                let tuned = select_and_test(&truth.x, &cfg, grid.as_ref(), &window)?;
                let r = &tuned.result;
                let mut out = ReplicateOutcome::default()
                    .metric("t_stat", r.t_stat)
                    .metric("p_value", p_value(r.t_stat, &r.bootstrap_draws))
                    .metric("d_hat", r.d_hat as f64)
                    .metric("blocks", r.blocks as f64)
                    .metric("window", r.window as f64);
                for &a in levels {
                    out = out.decision(format!("reject@{a}"), rejects(r.t_stat, &r.bootstrap_draws, a));
                }
                Ok(out)
            }
        }
    }
}
