//! Data-driven tuning: the sieve order by leave-one-out style cross
//! validation, and the test's block count and bootstrap window by the
//! minimal volatility rule.
//!
//! Minimal volatility over an ascending candidate list `c_1 < ... < c_s`
//! evaluates a criterion at each candidate, measures its local spread
//! `SE(l) = sqrt(sum_{|u|<=h} (T_{l+u} - mean)^2 / (2h))` and picks the
//! candidate `c_l`, `h < l <= s - h`, with the smallest spread (the first on
//! ties).

use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, BasisSpec};
use crate::covariance::{fit_sieve, local_pca_path};
use crate::error::{Error, Result};
use crate::factors::{estimate_num_factors, sym_eigen, FactorCountRule};
use crate::panel::PanelSeries;
use crate::static_test::{
    direct_statistic, estimated_kernel, run_with_kernel, z_columns, BlockLayout, StaticTestResult,
    TestConfig, TILE,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub candidates: Vec<usize>,
    pub h: usize,
}

impl TuningGrid {
    pub fn new(candidates: Vec<usize>, h: usize) -> Result<Self> {
        const OP: &str = "tuning.grid";
        if candidates.first() == Some(&0) {
            return Err(Error::invalid(OP, "candidates must be positive"));
        }
        if candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(OP, "candidates must be strictly increasing"));
        }
        if h == 0 || candidates.len() < 2 * h + 1 {
            return Err(Error::invalid(
                OP,
                format!("{} candidates cannot host a window of half-width {h}", candidates.len()),
            ));
        }
        Ok(Self { candidates, h })
    }

    /// `J in 1..=8`.
    pub fn default_orders() -> Self {
        Self { candidates: (1..=8).collect(), h: 1 }
    }

    /// `N in 2..=10`.
    pub fn default_blocks() -> Self {
        Self { candidates: (2..=10).collect(), h: 1 }
    }

    /// Windows from 2 up to `m / 4`, at most twelve of them, evenly spaced.
    pub fn default_windows(block_len: usize) -> Result<Self> {
        let top = (block_len / 4).max(2);
        let step = (top - 2).div_ceil(11).max(1);
        let mut candidates: Vec<usize> = (2..=top).step_by(step).collect();
        if *candidates.last().unwrap() != top {
            candidates.push(top);
        }
        Self::new(candidates, 1)
    }

    /// Local-PCA half-windows `k n^(2/3) / 5` for `k = 1..=10`, deduplicated
    /// and capped below `n / 2`.
    pub fn default_local_windows(n: usize) -> Result<Self> {
        let unit = (n as f64).powf(2.0 / 3.0) / 5.0;
        let mut candidates: Vec<usize> = (1..=10)
            .map(|k| ((k as f64 * unit).round() as usize).max(1))
            .filter(|&m| 2 * m < n)
            .collect();
        candidates.dedup();
        Self::new(candidates, 1)
    }

    fn retain(&self, keep: impl Fn(usize) -> bool, op: &'static str) -> Result<Self> {
        let candidates: Vec<usize> = self.candidates.iter().copied().filter(|&c| keep(c)).collect();
        if candidates.len() < 2 * self.h + 1 {
            return Err(Error::invalid(
                op,
                format!("only {} feasible candidates remain, need {}", candidates.len(), 2 * self.h + 1),
            ));
        }
        Ok(Self { candidates, h: self.h })
    }
}

/// Local spread of `values` around 0-based position `l`.
pub fn local_se(values: &[f64], l: usize, h: usize) -> f64 {
    let window = &values[l - h..=l + h];
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let ss: f64 = window.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (2 * h) as f64).sqrt()
}

/// Minimal-volatility choice on a criterion curve. Returns the 0-based
/// selected position and the spreads of the eligible positions `h..s-h`.
pub fn mv_select(curve: &[f64], h: usize) -> Result<(usize, Vec<f64>)> {
    if h == 0 || curve.len() < 2 * h + 1 {
        return Err(Error::invalid("tuning.mv_select", "curve too short for the volatility window"));
    }
    let se: Vec<f64> = (h..curve.len() - h).map(|l| local_se(curve, l, h)).collect();
    Ok((h + argmin_first(&se), se))
}

fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub selected: usize,
    /// `(J, CV(J))` for every candidate.
    pub curve: Vec<(usize, f64)>,
    /// Terms whose leverage reached one and were clipped.
    pub clipped_terms: usize,
}

const LEVERAGE_LIMIT: f64 = 1.0 - 1e-8;
const CLIPPED_DENOMINATOR: f64 = 1e-16;

/// Cross-validation criterion `sum_i sum_s e_{i,s}^2 / (1 - v_{i,s})^2` for
/// one sieve order, with `e_i = X_i - V V^T X_i` and `v_{i,s}` the diagonal
/// of `V V^T` at time `i/n`.
fn cv_criterion(x: &PanelSeries, model: &crate::covariance::SieveModel, rule: FactorCountRule) -> Result<(f64, usize)> {
    let n = x.n();
    let terms: Vec<(f64, usize)> = (1..=n)
        .into_par_iter()
        .map(|i| {
            let lam = model.lambda_hat(x.time(i))?;
            let eig = sym_eigen(&lam.matrix)?;
            let d = estimate_num_factors(&eig.values, n, rule)?.d_hat;
            let v = eig.vectors.columns(0, d);
            let xi = x.observation(i);
            let resid = &xi - v * (v.transpose() * &xi);
            let mut total = 0.0;
            let mut clipped = 0;
            for s in 0..x.p() {
                let lev = v.row(s).norm_squared();
                let denom = if lev >= LEVERAGE_LIMIT {
                    clipped += 1;
                    CLIPPED_DENOMINATOR
                } else {
                    (1.0 - lev).powi(2)
                };
                total += resid[s] * resid[s] / denom;
            }
            Ok((total, clipped))
        })
        .collect::<Result<_>>()?;
    Ok(terms.into_iter().fold((0.0, 0), |(a, b), (t, c)| (a + t, b + c)))
}

/// Picks the sieve order minimizing the cross-validation criterion. Values
/// within `1e-10` of the panel's total sum of squares of the minimum count
/// as ties and go to the smallest order.
pub fn cv_select_jn(
    x: &PanelSeries,
    grid: &TuningGrid,
    k0: usize,
    family: BasisFamily,
    rule: FactorCountRule,
) -> Result<CvSelection> {
    let top = *grid.candidates.last().ok_or_else(|| Error::invalid("tuning.cv_select_jn", "empty grid"))?;
    let full = fit_sieve(x, BasisSpec::new(family, top)?, k0)?;
    let mut curve = Vec::with_capacity(grid.candidates.len());
    let mut clipped_terms = 0;
    for &order in &grid.candidates {
        let (cv, clipped) = cv_criterion(x, &full.truncated(order)?, rule)?;
        curve.push((order, cv));
        clipped_terms += clipped;
    }
    let tol = 1e-10 * x.values().norm_squared();
    let min = curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let selected = curve.iter().find(|c| c.1 <= min + tol).map(|c| c.0).unwrap_or(top);
    Ok(CvSelection { selected, curve, clipped_terms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvSelection {
    pub selected: usize,
    /// Candidates that were feasible, in order.
    pub candidates: Vec<usize>,
    /// The criterion per feasible candidate (the statistic for block
    /// counts, empty for windows).
    pub criterion: Vec<f64>,
    /// Spread per eligible candidate `candidates[h..len-h]`.
    pub spread: Vec<f64>,
}

/// Minimal-volatility choice of the block count `N` from the statistic curve
/// `N -> T(N)`. The kernel basis comes from the full-sample form and does not
/// depend on `N`.
pub fn mv_select_blocks(x: &PanelSeries, grid: &TuningGrid, cfg: &TestConfig) -> Result<MvSelection> {
    let (_, f) = estimated_kernel(x, cfg)?;
    mv_select_blocks_with_kernel(x, &f, grid, cfg)
}

fn mv_select_blocks_with_kernel(
    x: &PanelSeries,
    f: &DMatrix<f64>,
    grid: &TuningGrid,
    cfg: &TestConfig,
) -> Result<MvSelection> {
    let n = x.n();
    let grid = grid.retain(|b| (n.saturating_sub(cfg.k0)) / b >= 4, "tuning.mv_select_blocks")?;
    let curve: Vec<f64> = grid
        .candidates
        .par_iter()
        .map(|&b| direct_statistic(x, f, &TestConfig { blocks: b, ..*cfg }))
        .collect::<Result<_>>()?;
    let (pos, spread) = mv_select(&curve, grid.h)?;
    Ok(MvSelection { selected: grid.candidates[pos], candidates: grid.candidates, criterion: curve, spread })
}

/// Per coordinate of one tile and every `r` in `1..=rows`, the cumulative
/// sum `sum_{j<=r} (S_{j,w} - (w/m) S_m)^2 / (w (m - w + 1))`, laid out
/// `rows x tile`.
fn cumulative_squares(z: &DMatrix<f64>, w: usize, rows: usize) -> DMatrix<f64> {
    let m = z.nrows();
    let scale = 1.0 / (w * (m - w + 1)) as f64;
    let share = w as f64 / m as f64;
    let mut out = DMatrix::zeros(rows, z.ncols());
    for (c, col) in z.column_iter().enumerate() {
        let total: f64 = col.sum();
        let mut run: f64 = col.rows(0, w).sum();
        let mut acc = 0.0;
        for j in 0..rows {
            if j > 0 {
                run += col[j + w - 1] - col[j - 1];
            }
            acc += (run - share * total).powi(2) * scale;
            out[(j, c)] = acc;
        }
    }
    out
}

/// Column maxima of the spread matrix over one coordinate tile.
fn tile_colmax(z: &DMatrix<f64>, grid: &TuningGrid, rows: usize) -> Vec<f64> {
    let h = grid.h;
    let s = grid.candidates.len();
    let stacks: Vec<DMatrix<f64>> = grid.candidates.iter().map(|&w| cumulative_squares(z, w, rows)).collect();
    let mut colmax = vec![0.0f64; s - 2 * h];
    let mut buf = vec![0.0; s];
    for c in 0..z.ncols() {
        for r in 0..rows {
            for (i, stack) in stacks.iter().enumerate() {
                buf[i] = stack[(r, c)];
            }
            for (slot, l) in colmax.iter_mut().zip(h..s - h) {
                *slot = slot.max(local_se(&buf, l, h));
            }
        }
    }
    colmax
}

fn window_selection<F>(m: usize, len: usize, grid: &TuningGrid, tile: F) -> Result<MvSelection>
where
    F: Fn(Range<usize>) -> DMatrix<f64> + Sync,
{
    let grid = grid.retain(|w| w < m, "tuning.mv_select_window")?;
    let rows = m - grid.candidates.last().unwrap() + 1;
    let starts: Vec<usize> = (0..len).step_by(TILE).collect();
    let colmax = starts
        .into_par_iter()
        .map(|s| tile_colmax(&tile(s..(s + TILE).min(len)), &grid, rows))
        .reduce(
            || vec![0.0; grid.candidates.len() - 2 * grid.h],
            |a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect(),
        );
    let pos = grid.h + argmin_first(&colmax);
    Ok(MvSelection { selected: grid.candidates[pos], candidates: grid.candidates, criterion: Vec::new(), spread: colmax })
}

/// Multivariate minimal-volatility choice of the bootstrap window from the
/// `m x L` array of `Z_i` rows. The cumulative index `r` runs over
/// `1..=m - max(grid) + 1`, the range shared by every candidate.
pub fn mv_select_window(z: &DMatrix<f64>, grid: &TuningGrid) -> Result<MvSelection> {
    window_selection(z.nrows(), z.ncols(), grid, |r| z.columns(r.start, r.len()).into_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedTest {
    pub result: StaticTestResult,
    pub blocks: Option<MvSelection>,
    pub window: Option<MvSelection>,
}

/// Minimal-volatility choice of the local-PCA half-window. Each candidate
/// gives a path of projectors onto the leading `d_hat(i/n)` eigenvectors;
/// the spread at a candidate is the root of the time-averaged squared
/// Frobenius spread of its neighbours' projectors.
pub fn mv_select_local_window(
    x: &PanelSeries,
    grid: &TuningGrid,
    k0: usize,
    rule: FactorCountRule,
) -> Result<MvSelection> {
    let n = x.n();
    let grid = grid.retain(|m| m >= 1 && 2 * m < n, "tuning.mv_select_local_window")?;
    let paths: Vec<Vec<DMatrix<f64>>> = grid
        .candidates
        .iter()
        .map(|&m| {
            local_pca_path(x, m, k0)?
                .par_iter()
                .map(|form| {
                    let eig = sym_eigen(&form.matrix)?;
                    let d = estimate_num_factors(&eig.values, n, rule)?.d_hat;
                    let v = eig.vectors.columns(0, d);
                    Ok(v * v.transpose())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let h = grid.h;
    let spread: Vec<f64> = (h..grid.candidates.len() - h)
        .map(|l| {
            let total: f64 = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut mean = DMatrix::zeros(x.p(), x.p());
                    for path in &paths[l - h..=l + h] {
                        mean += &path[i];
                    }
                    mean /= (2 * h + 1) as f64;
                    paths[l - h..=l + h].iter().map(|path| (&path[i] - &mean).norm_squared()).sum::<f64>()
                })
                .sum();
            (total / (2 * h * n) as f64).sqrt()
        })
        .collect();
    let pos = h + argmin_first(&spread);
    Ok(MvSelection { selected: grid.candidates[pos], candidates: grid.candidates, criterion: Vec::new(), spread })
}

/// How the bootstrap window is set in [`select_and_test`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WindowChoice {
    /// Keep `cfg.window`.
    Fixed,
    /// Minimal volatility over [`TuningGrid::default_windows`] of the chosen
    /// block length.
    DefaultGrid,
    Grid(TuningGrid),
}

/// Runs the static-loading test, choosing the block count by minimal
/// volatility when a grid is given and the window as requested.
pub fn select_and_test(
    x: &PanelSeries,
    cfg: &TestConfig,
    block_grid: Option<&TuningGrid>,
    window: &WindowChoice,
) -> Result<TunedTest> {
    let (d, f) = estimated_kernel(x, cfg)?;
    let mut cfg = *cfg;
    let blocks = match block_grid {
        Some(grid) => {
            let sel = mv_select_blocks_with_kernel(x, &f, grid, &cfg)?;
            cfg.blocks = sel.selected;
            Some(sel)
        }
        None => None,
    };
    let m = cfg.block_len(x.n());
    let grid = match window {
        WindowChoice::Fixed => None,
        WindowChoice::DefaultGrid => Some(TuningGrid::default_windows(m)?),
        WindowChoice::Grid(g) => Some(g.clone()),
    };
    let window = if let Some(grid) = grid {
        let layout = BlockLayout::new(x.n(), x.p(), f.ncols(), cfg.k0, cfg.blocks)?;
        let y = x.values() * &f;
        let sel = window_selection(m, layout.len(), &grid, |r| z_columns(x.values(), &y, &layout, r))?;
        cfg.window = sel.selected;
        Some(sel)
    } else {
        None
    };
    let result = run_with_kernel(x, &f, d, &cfg)?;
    Ok(TunedTest { result, blocks, window })
}
