//! Data-generating designs for the numerical studies.
//!
//! Factors are locally stationary linear processes generated by a truncated
//! moving average `z_i = s * sum_{j=0}^{L} c(i/n)^j eps_{i-j}` whose
//! pre-sample innovations come from a burn-in segment.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    /// One factor, four loading blocks driven by smooth functions of time.
    TimeVaryingLoading,
    /// Three static factors, heavy-tailed i.i.d. noise.
    NullModelI,
    /// Three static factors, product white noise `e_i = c e~_{i-1} e~_i`.
    NullModelII,
    /// One normalized loading vector drifting with strength `d`.
    PowerModel { d: f64 },
    /// Two-column loading whose second singular value is zero until `t = 1/2`.
    FactorCountJump,
    /// The time-varying loading design with a persistent factor.
    PersistentLoading,
}

impl Design {
    pub fn name(&self) -> String {
        match self {
            Design::TimeVaryingLoading => "time-varying-loading".into(),
            Design::NullModelI => "null-model-1".into(),
            Design::NullModelII => "null-model-2".into(),
            Design::PowerModel { d } => format!("power-model-d{d}"),
            Design::FactorCountJump => "factor-count-jump".into(),
            Design::PersistentLoading => "persistent-loading".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub replicates: usize,
    pub ma_truncation: usize,
    pub burn_in: usize,
}

impl SimulationSpec {
    pub fn new(design: Design, n: usize, p: usize, seed: u64, replicates: usize) -> Self {
        Self {
            design,
            n,
            p,
            seed,
            replicates,
            ma_truncation: 200,
            burn_in: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "sim-lab.gen_design";
        if self.n < 2 || self.p < 1 || self.replicates < 1 {
            return Err(Error::invalid(OP, "n >= 2, p >= 1 and replicates >= 1 are required"));
        }
        if self.burn_in < self.ma_truncation {
            return Err(Error::invalid(OP, "burn_in must cover the moving-average truncation"));
        }
        if let Design::PowerModel { d } = self.design {
            if !(d >= 0.0) {
                return Err(Error::invalid(OP, format!("power-model strength {d} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Random stream of one replicate: a ChaCha8 generator keyed by `seed` with
/// the replicate index as stream id.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Generated sample together with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulationTruth {
    pub x: PanelSeries,
    /// `A(i/n)`, `p x d(i/n)`.
    pub loadings: Vec<DMatrix<f64>>,
    /// `z_i`, length `d(i/n)`.
    pub factors: Vec<DVector<f64>>,
    /// `e_i` stored row-wise, `n x p`.
    pub noise: DMatrix<f64>,
    pub d_true: Vec<usize>,
}

impl SimulationTruth {
    /// `A(i/n) z_i` for 1-based `i`.
    pub fn common(&self, i: usize) -> DVector<f64> {
        &self.loadings[i - 1] * &self.factors[i - 1]
    }

    /// Orthonormal basis of `span A(i/n)` for 1-based `i`.
    pub fn span(&self, i: usize) -> DMatrix<f64> {
        orthonormal_basis(&self.loadings[i - 1])
    }

    fn assemble(
        loadings: Vec<DMatrix<f64>>,
        factors: Vec<DVector<f64>>,
        noise: DMatrix<f64>,
    ) -> Result<Self> {
        let n = noise.nrows();
        let p = noise.ncols();
        let mut x = DMatrix::zeros(n, p);
        for i in 0..n {
            let common = &loadings[i] * &factors[i];
            for s in 0..p {
                x[(i, s)] = common[s] + noise[(i, s)];
            }
        }
        let d_true = loadings.iter().map(|a| a.ncols()).collect();
        Ok(Self {
            x: PanelSeries::new(x)?,
            loadings,
            factors,
            noise,
            d_true,
        })
    }
}

pub(crate) fn orthonormal_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let q = a.clone().qr().q();
    q.columns(0, a.ncols()).into_owned()
}

/// Index of the last row of block `b` of `blocks` near-equal blocks
/// (`round(b p / blocks)`).
fn block_end(b: usize, blocks: usize, p: usize) -> usize {
    ((b * p) as f64 / blocks as f64).round() as usize
}

/// Which of `blocks` row blocks 0-based row `s` falls into, with the
/// boundaries `round(p/blocks), round(2p/blocks), ...`; rows past the last
/// interior boundary belong to block `last_block`.
fn block_of(s: usize, blocks: usize, last_block: usize, p: usize) -> usize {
    (1..=last_block)
        .find(|&b| s < block_end(b, blocks, p))
        .map_or(last_block, |b| b - 1)
}

struct MaProcess {
    innovations: Vec<f64>,
    burn_in: usize,
    truncation: usize,
    scale: f64,
}

impl MaProcess {
    fn draw<R: Rng>(rng: &mut R, n: usize, burn_in: usize, truncation: usize, scale: f64) -> Self {
        let innovations = (0..burn_in + n).map(|_| rng.sample(StandardNormal)).collect();
        Self {
            innovations,
            burn_in,
            truncation,
            scale,
        }
    }

    /// Value at 1-based time `i` with coefficient `c = c(i/n)`.
    fn value(&self, i: usize, c: f64) -> f64 {
        let now = self.burn_in + i - 1;
        let mut acc = 0.0;
        let mut weight = 1.0;
        for j in 0..=self.truncation {
            acc += weight * self.innovations[now - j];
            weight *= c;
        }
        self.scale * acc
    }
}

fn normal_noise<R: Rng>(rng: &mut R, n: usize, p: usize, sd: f64) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, p);
    for i in 0..n {
        for s in 0..p {
            e[(i, s)] = sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    e
}

/// Loading functions of the time-varying design.
pub(crate) fn tv_block_functions(t: f64) -> [f64; 4] {
    [
        1.3 * t.exp() - 1.0,
        0.6 * (PI * t / 3.0).cos(),
        -(0.5 + 2.0 * t * t),
        2.0 * (PI * t / 3.0).cos() + 0.6 * t,
    ]
}

fn tv_loading(p: usize, t: f64) -> DMatrix<f64> {
    let f = tv_block_functions(t);
    DMatrix::from_fn(p, 1, |s, _| {
        let base = 1.0 + 0.2 * ((s + 1) as f64 / p as f64).sqrt();
        base * f[block_of(s, 5, 3, p)]
    })
}

/// Draws one replicate of `spec.design`.
pub fn gen_design(spec: &SimulationSpec, replicate: usize) -> Result<SimulationTruth> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let nf = n as f64;
    let mut rng = replicate_rng(spec.seed, replicate as u64);
    let (l, burn) = (spec.ma_truncation, spec.burn_in);
    match spec.design {
        Design::TimeVaryingLoading | Design::PersistentLoading => {
            let coef = |t: f64| match spec.design {
                Design::PersistentLoading => 0.8 - 0.2 * t,
                _ => 0.4 * (0.4 - 0.2 * t),
            };
            let z = MaProcess::draw(&mut rng, n, burn, l, 1.0);
            let noise = normal_noise(&mut rng, n, p, 0.5);
            let mut loadings = Vec::with_capacity(n);
            let mut factors = Vec::with_capacity(n);
            for i in 1..=n {
                let t = i as f64 / nf;
                loadings.push(tv_loading(p, t));
                factors.push(DVector::from_element(1, z.value(i, coef(t))));
            }
            SimulationTruth::assemble(loadings, factors, noise)
        }
        Design::NullModelI | Design::NullModelII => {
            let base = DMatrix::from_fn(p, 3, |_, _| 2.0 * rng.gen_range(-1.0..1.0));
            let multipliers = [0.8, 0.9, 1.0];
            let a = DMatrix::from_fn(p, 3, |s, c| base[(s, c)] * multipliers[block_of(s, 3, 2, p)]);
            let thetas: [fn(f64) -> f64; 3] =
                [|t| 0.1 + 0.06 * t * t, |t| 0.12 + 0.04 * t * t, |_| 0.15];
            let processes: Vec<MaProcess> =
                (0..3).map(|_| MaProcess::draw(&mut rng, n, burn, l, 2.0)).collect();
            let noise = if spec.design == Design::NullModelI {
                let t5 = StudentT::new(5.0).expect("valid degrees of freedom");
                let scale = 16.0 / 25.0 / (5.0f64 / 4.0).sqrt();
                DMatrix::from_fn(n, p, |_, _| scale * t5.sample(&mut rng))
            } else {
                product_noise(&mut rng, n, p)
            };
            let mut loadings = Vec::with_capacity(n);
            let mut factors = Vec::with_capacity(n);
            for i in 1..=n {
                let t = i as f64 / nf;
                loadings.push(a.clone());
                factors.push(DVector::from_fn(3, |k, _| processes[k].value(i, thetas[k](t))));
            }
            SimulationTruth::assemble(loadings, factors, noise)
        }
        Design::PowerModel { d } => {
            let z = MaProcess::draw(&mut rng, n, burn, l, 4.0);
            let noise = normal_noise(&mut rng, n, p, 0.5);
            let mut loadings = Vec::with_capacity(n);
            let mut factors = Vec::with_capacity(n);
            for i in 1..=n {
                let t = i as f64 / nf;
                loadings.push(power_loading(p, t, d));
                factors.push(DVector::from_element(1, z.value(i, 0.2 + 0.2 * t)));
            }
            SimulationTruth::assemble(loadings, factors, noise)
        }
        Design::FactorCountJump => {
            let processes: Vec<MaProcess> =
                (0..2).map(|_| MaProcess::draw(&mut rng, n, burn, l, 1.0)).collect();
            let noise = normal_noise(&mut rng, n, p, 0.5);
            let mut loadings = Vec::with_capacity(n);
            let mut factors = Vec::with_capacity(n);
            for i in 1..=n {
                let t = i as f64 / nf;
                let star = jump_loading(p, t);
                let z_star = DVector::from_fn(2, |k, _| processes[k].value(i, 0.5));
                let (a, z) = reduce_rank(&star, &z_star);
                loadings.push(a);
                factors.push(z);
            }
            SimulationTruth::assemble(loadings, factors, noise)
        }
    }
}

fn product_noise<R: Rng>(rng: &mut R, n: usize, p: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, p);
    for s in 0..p {
        let mut prev: f64 = rng.sample(StandardNormal);
        for i in 0..n {
            let cur: f64 = rng.sample(StandardNormal);
            e[(i, s)] = 16.0 / 25.0 * prev * cur;
            prev = cur;
        }
    }
    e
}

/// Unit-norm loading `A~_D(t) / |A~_D(t)|` of the power design.
pub(crate) fn power_loading(p: usize, t: f64, d: f64) -> DMatrix<f64> {
    let f = [1.0 - d * t, 1.0 - 2.0 * d * t, 1.0 - d * t * t, 1.0 - 2.0 * d * t * t, 1.0];
    let raw = DMatrix::from_fn(p, 1, |s, _| f[block_of(s, 5, 4, p)]);
    let norm = raw.norm();
    raw / norm
}

/// Second-column strength of the jump design: zero up to `t = 1/2`, then a
/// steep linear ramp to one.
fn jump_strength(t: f64) -> f64 {
    ((t - 0.5) / 0.02).clamp(0.0, 1.0)
}

fn jump_loading(p: usize, t: f64) -> DMatrix<f64> {
    let g = jump_strength(t);
    DMatrix::from_fn(p, 2, |s, c| {
        let u = (s + 1) as f64 / p as f64;
        if c == 0 {
            1.0 + 0.2 * u.sqrt()
        } else {
            g * 1.5 * (2.0 * PI * u).cos()
        }
    })
}

/// Drops zero singular values: `A* z* = (U_d S_d)(V_d^T z*)`.
fn reduce_rank(star: &DMatrix<f64>, z_star: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let svd = star.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors");
    let v_t = svd.v_t.expect("right singular vectors");
    let scale = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&c| svd.singular_values[c] > 1e-12 * scale)
        .collect();
    let a = DMatrix::from_fn(star.nrows(), keep.len(), |s, c| {
        u[(s, keep[c])] * svd.singular_values[keep[c]]
    });
    let z = DVector::from_fn(keep.len(), |c, _| v_t.row(keep[c]).dot(&z_star.transpose()));
    (a, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(design: Design, n: usize, p: usize) -> SimulationSpec {
        SimulationSpec::new(design, n, p, 11, 1)
    }

    #[test]
    fn reconstruction_is_exact() {
        for design in [
            Design::TimeVaryingLoading,
            Design::NullModelI,
            Design::NullModelII,
            Design::PowerModel { d: 0.3 },
            Design::FactorCountJump,
            Design::PersistentLoading,
        ] {
            let truth = gen_design(&spec(design, 120, 12), 0).unwrap();
            for i in 1..=120 {
                let resid = truth.x.observation(i) - truth.common(i)
                    - truth.noise.row(i - 1).transpose();
                assert!(resid.amax() < 1e-12, "{design:?} row {i}");
            }
        }
    }

    #[test]
    fn replicates_differ_and_repeat() {
        let s = spec(Design::TimeVaryingLoading, 50, 5);
        let a = gen_design(&s, 3).unwrap();
        let b = gen_design(&s, 3).unwrap();
        let c = gen_design(&s, 4).unwrap();
        assert_eq!(a.x, b.x);
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn tv_loading_blocks() {
        let a = tv_loading(50, 0.0);
        // blocks end at rows 10, 20, 30
        let f = tv_block_functions(0.0);
        assert!((a[(9, 0)] - (1.0 + 0.2 * 0.2f64.sqrt()) * f[0]).abs() < 1e-15);
        assert!((a[(10, 0)] - (1.0 + 0.2 * 0.22f64.sqrt()) * f[1]).abs() < 1e-15);
        assert!((a[(29, 0)] - (1.0 + 0.2 * 0.6f64.sqrt()) * f[2]).abs() < 1e-15);
        assert!((a[(30, 0)] - (1.0 + 0.2 * 0.62f64.sqrt()) * f[3]).abs() < 1e-15);
        assert!((a[(49, 0)] - 1.2 * f[3]).abs() < 1e-15);
    }

    #[test]
    fn ma_truncation_is_negligible() {
        // worst-case coefficient of the time-varying design is 0.16
        let bound = 0.16f64.powi(201) / (1.0 - 0.16);
        assert!(bound < 1e-150);
    }

    #[test]
    fn power_loading_has_unit_norm() {
        for &t in &[0.0, 0.25, 0.5, 1.0] {
            for &d in &[0.0, 0.2, 0.5] {
                assert!((power_loading(25, t, d).norm() - 1.0).abs() < 1e-12);
            }
        }
        // D = 0 gives a constant loading
        assert_eq!(power_loading(25, 0.1, 0.0), power_loading(25, 0.9, 0.0));
    }

    #[test]
    fn jump_design_changes_rank() {
        let truth = gen_design(&spec(Design::FactorCountJump, 200, 20), 0).unwrap();
        assert_eq!(truth.d_true[..100], vec![1; 100][..]);
        assert!(truth.d_true[101..].iter().all(|&d| d == 2));
    }

    #[test]
    fn product_noise_moments() {
        let mut rng = replicate_rng(99, 0);
        let e = product_noise(&mut rng, 1_000_000, 1);
        let m = e.mean();
        let var = e.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (e.len() - 1) as f64;
        let target = (16.0f64 / 25.0).powi(2);
        // Var of e^2 is c^4 (E x^4)^2 - c^4 = 8 c^4
        let se_mean = (target / 1e6).sqrt();
        let se_var = (8.0 * target * target / 1e6).sqrt();
        assert!(m.abs() < 3.0 * se_mean, "mean {m}");
        assert!((var - target).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn invalid_specs() {
        assert!(gen_design(&spec(Design::PowerModel { d: -0.1 }, 50, 5), 0).is_err());
        let mut s = spec(Design::TimeVaryingLoading, 50, 5);
        s.burn_in = 10;
        assert!(gen_design(&s, 0).is_err());
    }
}
