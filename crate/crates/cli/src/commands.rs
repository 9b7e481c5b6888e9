//! The five subcommands. Each returns a serializable report and may write
//! CSV series for plotting.

use std::fs;
use std::path::Path;

use evofactor_core::basis::{BasisFamily, BasisSpec};
use evofactor_core::factors::{analyze, FactorCountRule};
use evofactor_core::forecast::{evaluate, extract_factors, ForecastConfig, ForecastReport};
use evofactor_core::sim::{monte_carlo, Design, Pipeline, SimulationReport, SimulationSpec};
use evofactor_core::static_test::{build_z, estimated_kernel, StaticTestResult, TestConfig};
use evofactor_core::tuning::{
    cv_select_jn, mv_select_blocks, mv_select_window, select_and_test, CvSelection, MvSelection, TuningGrid,
    WindowChoice,
};
use evofactor_core::{fit_sieve, PanelSeries, SieveModel};
use serde::Serialize;

use crate::args::{
    Choice, DesignName, EstimateArgs, InputArgs, PredictArgs, SieveArgs, SimulateArgs, StaticTestArgs, TestArgs,
    TuneArgs,
};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn load(input: &InputArgs) -> Result<PanelSeries> {
    Ok(PanelSeries::load_csv(&input.input, input.header)?)
}

fn write_csv<const K: usize>(dir: Option<&Path>, name: &str, header: [&str; K], rows: impl Iterator<Item = [String; K]>) -> Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir).map_err(|e| CliError::io("write_plot_data", e))?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io("write_plot_data", e))?;
    w.write_record(header).map_err(|e| CliError::io("write_plot_data", e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::io("write_plot_data", e))?;
    }
    w.flush().map_err(|e| CliError::io("write_plot_data", e))
}

#[derive(Serialize)]
pub struct SieveFit {
    pub basis: BasisFamily,
    pub order: usize,
    pub k0: usize,
    pub rule: FactorCountRule,
    /// Present when the order was cross-validated.
    pub order_selection: Option<CvSelection>,
}

fn fit(x: &PanelSeries, a: &SieveArgs) -> Result<(SieveModel, SieveFit)> {
    let rule = a.rule(x.n());
    let (order, order_selection) = match a.jn {
        Choice::Fixed(j) => (j, None),
        Choice::Auto => {
            let grid = TuningGrid { candidates: (1..=a.jn_max).collect(), h: 0 };
            let sel = cv_select_jn(x, &grid, a.k0, a.basis, rule)?;
            (sel.selected, Some(sel))
        }
    };
    let model = fit_sieve(x, BasisSpec::new(a.basis, order)?, a.k0)?;
    Ok((model, SieveFit { basis: a.basis, order, k0: a.k0, rule, order_selection }))
}

#[derive(Serialize)]
pub struct TimeRecord {
    pub t: f64,
    pub d_hat: usize,
    pub search_bound: usize,
    /// Share of eigenvalue mass in the leading `d_hat` directions.
    pub explained: f64,
    pub eigenvalues: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vectors: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
pub struct EstimateReport {
    pub command: &'static str,
    pub n: usize,
    pub p: usize,
    pub sieve: SieveFit,
    pub records: Vec<TimeRecord>,
    pub stable_intervals: Vec<(f64, f64)>,
}

pub fn estimate(a: &EstimateArgs, plots: Option<&Path>) -> Result<EstimateReport> {
    let x = load(&a.input)?;
    let (model, sieve) = fit(&x, &a.sieve)?;
    let structure = analyze(&model, &x.time_grid(), sieve.rule)?;
    let records: Vec<TimeRecord> = structure
        .records
        .iter()
        .map(|r| TimeRecord {
            t: r.t,
            d_hat: r.d_hat(),
            search_bound: r.count.search_bound,
            explained: r.explained,
            eigenvalues: r.eigen.values.clone(),
            vectors: a
                .with_vectors
                .then(|| r.span().column_iter().map(|c| c.iter().copied().collect()).collect()),
        })
        .collect();
    write_csv(plots, "dimension.csv", ["t", "d_hat"], records.iter().map(|r| [r.t.to_string(), r.d_hat.to_string()]))?;
    write_csv(
        plots,
        "explained.csv",
        ["t", "explained"],
        records.iter().map(|r| [r.t.to_string(), r.explained.to_string()]),
    )?;
    Ok(EstimateReport {
        command: "estimate",
        n: x.n(),
        p: x.p(),
        sieve,
        stable_intervals: structure.stable_intervals(),
        records,
    })
}

fn test_config(a: &StaticTestArgs, k0: usize) -> TestConfig {
    let mut cfg = TestConfig {
        k0,
        bootstrap: a.bootstrap,
        alpha: a.alpha,
        seed: a.seed,
        d_override: a.factors,
        ..TestConfig::default()
    };
    if let Choice::Fixed(nb) = a.nn {
        cfg.blocks = nb;
    }
    if let Choice::Fixed(w) = a.wn {
        cfg.window = w;
    }
    cfg
}

fn block_grid(a: &StaticTestArgs) -> Result<TuningGrid> {
    Ok(TuningGrid::new(TuningGrid::default_blocks().candidates, a.h)?)
}

#[derive(Serialize)]
pub struct TestReport {
    pub command: &'static str,
    pub n: usize,
    pub p: usize,
    pub result: StaticTestResult,
    pub block_selection: Option<MvSelection>,
    pub window_selection: Option<MvSelection>,
}

pub fn test(a: &TestArgs, plots: Option<&Path>) -> Result<TestReport> {
    let x = load(&a.input)?;
    let cfg = test_config(&a.test, a.k0);
    let grid = match a.test.nn {
        Choice::Auto => Some(block_grid(&a.test)?),
        Choice::Fixed(_) => None,
    };
    let window = match a.test.wn {
        Choice::Fixed(_) => WindowChoice::Fixed,
        Choice::Auto if a.test.h == 1 => WindowChoice::DefaultGrid,
        Choice::Auto => {
            // the default grid depends on the block length, known once N is
            let blocks = match &grid {
                Some(g) => mv_select_blocks(&x, g, &cfg)?.selected,
                None => cfg.blocks,
            };
            let m = TestConfig { blocks, ..cfg }.block_len(x.n());
            let w = TuningGrid::default_windows(m)?;
            WindowChoice::Grid(TuningGrid::new(w.candidates, a.test.h)?)
        }
    };
    let tuned = select_and_test(&x, &cfg, grid.as_ref(), &window)?;
    write_csv(
        plots,
        "bootstrap.csv",
        ["draw"],
        tuned.result.bootstrap_draws.iter().map(|k| [k.to_string()]),
    )?;
    Ok(TestReport {
        command: "test",
        n: x.n(),
        p: x.p(),
        result: tuned.result,
        block_selection: tuned.blocks,
        window_selection: tuned.window,
    })
}

#[derive(Serialize)]
pub struct TuneReport {
    pub command: &'static str,
    pub n: usize,
    pub p: usize,
    pub order: CvSelection,
    pub blocks: MvSelection,
    pub window: MvSelection,
}

pub fn tune(a: &TuneArgs, plots: Option<&Path>) -> Result<TuneReport> {
    let x = load(&a.input)?;
    let rule = a.sieve.rule(x.n());
    let orders = TuningGrid { candidates: (1..=a.sieve.jn_max).collect(), h: 0 };
    let order = cv_select_jn(&x, &orders, a.sieve.k0, a.sieve.basis, rule)?;
    let cfg = test_config(&a.test, a.sieve.k0);
    let blocks = mv_select_blocks(&x, &block_grid(&a.test)?, &cfg)?;
    let cfg = TestConfig { blocks: blocks.selected, ..cfg };
    let (_, f) = estimated_kernel(&x, &cfg)?;
    let z = build_z(&x, &f, &cfg)?;
    let windows = TuningGrid::new(TuningGrid::default_windows(cfg.block_len(x.n()))?.candidates, a.test.h)?;
    let window = mv_select_window(&z, &windows)?;

    write_csv(plots, "order_cv.csv", ["order", "cv"], order.curve.iter().map(|(j, v)| [j.to_string(), v.to_string()]))?;
    write_csv(
        plots,
        "blocks_statistic.csv",
        ["blocks", "statistic"],
        blocks.candidates.iter().zip(&blocks.criterion).map(|(b, v)| [b.to_string(), v.to_string()]),
    )?;
    let spread_rows = |sel: &MvSelection, h: usize| -> Vec<[String; 2]> {
        sel.candidates[h..].iter().zip(&sel.spread).map(|(c, s)| [c.to_string(), s.to_string()]).collect()
    };
    write_csv(plots, "blocks_spread.csv", ["blocks", "spread"], spread_rows(&blocks, a.test.h).into_iter())?;
    write_csv(plots, "window_spread.csv", ["window", "spread"], spread_rows(&window, a.test.h).into_iter())?;
    Ok(TuneReport { command: "tune", n: x.n(), p: x.p(), order, blocks, window })
}

#[derive(Serialize)]
pub struct SimulateReport {
    pub command: &'static str,
    pub pipeline: Pipeline,
    pub report: SimulationReport,
}

pub fn simulate(a: &SimulateArgs) -> Result<SimulateReport> {
    let (design, pipeline) = match a.design {
        DesignName::Table1 => (Design::TimeVaryingLoading, Pipeline::span_accuracy()),
        DesignName::Table3Model1 => (Design::NullModelI, Pipeline::tuned_static_test(a.bootstrap)),
        DesignName::Table3Model2 => (Design::NullModelII, Pipeline::tuned_static_test(a.bootstrap)),
        DesignName::Table4 => (Design::PowerModel { d: a.strength }, Pipeline::tuned_static_test(a.bootstrap)),
        DesignName::FactorCountJump => (Design::FactorCountJump, Pipeline::factor_count_scan()),
        DesignName::PersistentLoading => (Design::PersistentLoading, Pipeline::forecast((a.n / 2).max(50))),
    };
    let spec = SimulationSpec::new(design, a.n, a.p, a.seed, a.reps);
    let report = monte_carlo(&spec, |r, truth| pipeline.run(r, truth))?;
    if let Some(path) = &a.table_csv {
        write_table(path, &report)?;
    }
    Ok(SimulateReport { command: "simulate", pipeline, report })
}

/// One row per study: design, sizes, then mean and standard error of every
/// metric and the rate of every decision.
fn write_table(path: &Path, r: &SimulationReport) -> Result<()> {
    let io = |e: csv::Error| CliError::io("write_table", e);
    let mut header = vec!["design".to_string(), "n".into(), "p".into(), "replicates".into(), "failures".into()];
    let mut row = vec![
        r.spec.design.name(),
        r.spec.n.to_string(),
        r.spec.p.to_string(),
        r.completed.to_string(),
        r.failures.len().to_string(),
    ];
    for (k, m) in &r.metrics {
        header.push(format!("{k} mean"));
        header.push(format!("{k} se"));
        row.push(m.mean.to_string());
        row.push(m.se.to_string());
    }
    for (k, s) in &r.rejections {
        header.push(format!("{k} rate"));
        row.push(s.rate.to_string());
    }
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(&header).map_err(io)?;
    w.write_record(&row).map_err(io)?;
    w.flush().map_err(|e| CliError::io("write_table", e))
}

#[derive(Serialize)]
pub struct PredictReport {
    pub command: &'static str,
    pub n: usize,
    pub p: usize,
    pub sieve: SieveFit,
    pub eval_start: usize,
    pub mspe: f64,
    pub benchmark_mspe: f64,
    pub d_max: usize,
}

pub fn predict(a: &PredictArgs, plots: Option<&Path>) -> Result<PredictReport> {
    let x = load(&a.input)?;
    let (model, sieve) = fit(&x, &a.sieve)?;
    let d_max = match a.d_max {
        Some(d) => d,
        None => {
            let probe = extract_factors(&x, &model, 1, sieve.rule)?;
            probe.d_path.iter().copied().max().unwrap_or(1).clamp(1, x.p())
        }
    };
    let cfg = ForecastConfig {
        d_max,
        ar_order_max: a.ar_order_max,
        eval_start: a.eval_start.unwrap_or(x.n() / 2),
        count_rule: sieve.rule,
    };
    cfg.validate(x.n(), x.p())?;
    let panel = extract_factors(&x, &model, d_max, sieve.rule)?;
    let ForecastReport { mspe, benchmark_mspe, origins, .. } = evaluate(&x, &panel, &cfg)?;
    write_csv(
        plots,
        "forecast_errors.csv",
        ["origin", "error", "benchmark_error"],
        origins.iter().map(|o| [o.origin.to_string(), o.error.to_string(), o.benchmark_error.to_string()]),
    )?;
    Ok(PredictReport {
        command: "predict",
        n: x.n(),
        p: x.p(),
        sieve,
        eval_start: cfg.eval_start,
        mspe,
        benchmark_mspe,
        d_max,
    })
}
