//! Orthonormal basis families on `[0, 1]` for the sieve expansion of the
//! time-varying lagged covariance.
//!
//! Two families are available:
//!
//! * `legendre`: `B_j(t) = sqrt(2j - 1) * P_{j-1}(2t - 1)`, the shifted Legendre
//!   polynomials rescaled to unit `L2[0,1]` norm;
//! * `fourier`: `B_1 = 1`, `B_{2m}(t) = sqrt(2) cos(2 pi m t)`,
//!   `B_{2m+1}(t) = sqrt(2) sin(2 pi m t)` (cosine first).

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisFamily {
    Legendre,
    Fourier,
}

impl fmt::Display for BasisFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisFamily::Legendre => f.write_str("legendre"),
            BasisFamily::Fourier => f.write_str("fourier"),
        }
    }
}

impl FromStr for BasisFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "legendre" => Ok(BasisFamily::Legendre),
            "fourier" | "trigonometric" => Ok(BasisFamily::Fourier),
            other => Err(Error::invalid(
                "sieve-basis.parse",
                format!("unknown basis family {other:?} (expected \"legendre\" or \"fourier\")"),
            )),
        }
    }
}

/// A basis family truncated at order `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    family: BasisFamily,
    order: usize,
}

impl BasisSpec {
    pub fn new(family: BasisFamily, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("sieve-basis.new", "basis order must be at least 1"));
        }
        Ok(Self { family, order })
    }

    pub fn legendre(order: usize) -> Result<Self> {
        Self::new(BasisFamily::Legendre, order)
    }

    pub fn fourier(order: usize) -> Result<Self> {
        Self::new(BasisFamily::Fourier, order)
    }

    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `B_j(t)` for `1 <= j <= J` and `t` in `[0, 1]`.
    pub fn value(&self, j: usize, t: f64) -> Result<f64> {
        if j == 0 || j > self.order {
            return Err(Error::invalid(
                "sieve-basis.basis_value",
                format!("index {j} outside 1..={}", self.order),
            ));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(
                "sieve-basis.basis_value",
                format!("t = {t} outside [0, 1]"),
            ));
        }
        let mut out = vec![0.0; j];
        fill_values(self.family, t, &mut out);
        Ok(out[j - 1])
    }

    /// All `J` basis values at `t`; `t` is assumed to lie in `[0, 1]`.
    pub fn values_at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.order];
        fill_values(self.family, t, &mut out);
        out
    }
}

fn fill_values(family: BasisFamily, t: f64, out: &mut [f64]) {
    match family {
        BasisFamily::Legendre => {
            // Bonnet recurrence on u = 2t - 1, then rescale each degree.
            let u = 2.0 * t - 1.0;
            let (mut prev, mut cur) = (0.0, 1.0);
            for (deg, slot) in out.iter_mut().enumerate() {
                if deg > 0 {
                    let k = (deg - 1) as f64;
                    let next = ((2.0 * k + 1.0) * u * cur - k * prev) / (k + 1.0);
                    prev = cur;
                    cur = next;
                }
                *slot = (2.0 * deg as f64 + 1.0).sqrt() * cur;
            }
        }
        BasisFamily::Fourier => {
            for (idx, slot) in out.iter_mut().enumerate() {
                *slot = if idx == 0 {
                    1.0
                } else {
                    let m = ((idx + 1) / 2) as f64;
                    let arg = 2.0 * PI * m * t;
                    if idx % 2 == 1 {
                        SQRT_2 * arg.cos()
                    } else {
                        SQRT_2 * arg.sin()
                    }
                };
            }
        }
    }
}

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`.
pub fn gauss_legendre(points: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; points];
    let mut weights = vec![0.0; points];
    let nf = points as f64;
    for i in 0..points.div_ceil(2) {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(points, x);
            deriv = dp;
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(points, x);
        if dp.is_finite() {
            deriv = dp;
        }
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        // Map [-1, 1] to [0, 1].
        nodes[i] = 0.5 * (1.0 - x);
        nodes[points - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[points - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Largest deviation of the quadrature Gram matrix `Q(B_m B_n)` from the
/// identity, using Gauss–Legendre quadrature with the given node count.
pub fn gram_defect(spec: &BasisSpec, quadrature_points: usize) -> f64 {
    let j = spec.order();
    let (nodes, weights) = gauss_legendre(quadrature_points.max(1));
    let mut gram = vec![0.0; j * j];
    for (&t, &w) in nodes.iter().zip(&weights) {
        let vals = spec.values_at(t);
        for a in 0..j {
            for b in 0..j {
                gram[a * j + b] += w * vals[a] * vals[b];
            }
        }
    }
    let mut defect: f64 = 0.0;
    for a in 0..j {
        for b in 0..j {
            let target = if a == b { 1.0 } else { 0.0 };
            defect = defect.max((gram[a * j + b] - target).abs());
        }
    }
    defect
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn legendre_closed_forms() {
        let spec = BasisSpec::legendre(3).unwrap();
        assert_eq!(spec.value(1, 0.37).unwrap(), 1.0);
        assert!(spec.value(2, 0.5).unwrap().abs() < 1e-15);
        assert!((spec.value(3, 0.0).unwrap() - 5f64.sqrt()).abs() < 1e-14);
        let t: f64 = 0.3;
        let b3 = 5f64.sqrt() * (6.0 * t * t - 6.0 * t + 1.0);
        assert!((spec.value(3, t).unwrap() - b3).abs() < 1e-14);
    }

    #[test]
    fn fourier_is_cosine_first() {
        let spec = BasisSpec::fourier(5).unwrap();
        let t = 0.1;
        assert!((spec.value(2, t).unwrap() - SQRT_2 * (2.0 * PI * t).cos()).abs() < 1e-15);
        assert!((spec.value(3, t).unwrap() - SQRT_2 * (2.0 * PI * t).sin()).abs() < 1e-15);
        assert!((spec.value(5, t).unwrap() - SQRT_2 * (4.0 * PI * t).sin()).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_arguments() {
        let spec = BasisSpec::legendre(3).unwrap();
        assert!(spec.value(0, 0.5).is_err());
        assert!(spec.value(4, 0.5).is_err());
        assert!(spec.value(1, 1.01).is_err());
        assert!(spec.value(1, -0.01).is_err());
        assert!(BasisSpec::legendre(0).is_err());
    }

    #[test]
    fn family_strings() {
        assert_eq!("legendre".parse::<BasisFamily>().unwrap(), BasisFamily::Legendre);
        assert_eq!("fourier".parse::<BasisFamily>().unwrap(), BasisFamily::Fourier);
        assert!("wavelet".parse::<BasisFamily>().is_err());
        assert_eq!(BasisFamily::Fourier.to_string(), "fourier");
    }

    #[test]
    fn quadrature_integrates_polynomials() {
        let (nodes, weights) = gauss_legendre(5);
        // exact up to degree 9: integral of t^9 on [0,1] is 1/10
        let q: f64 = nodes.iter().zip(&weights).map(|(t, w)| w * t.powi(9)).sum();
        assert!((q - 0.1).abs() < 1e-15);
        let total: f64 = weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gram_defect_examples() {
        assert!(gram_defect(&BasisSpec::legendre(6).unwrap(), 64) < 1e-12);
        assert!(gram_defect(&BasisSpec::fourier(5).unwrap(), 512) < 1e-10);
        assert!(gram_defect(&BasisSpec::legendre(1).unwrap(), 2) < 1e-15);
    }

    #[test]
    fn orthonormal_up_to_order_thirty() {
        for j in 1..=30 {
            for family in [BasisFamily::Legendre, BasisFamily::Fourier] {
                let spec = BasisSpec::new(family, j).unwrap();
                let defect = gram_defect(&spec, (4 * j * j).max(2));
                assert!(defect < 1e-8, "{family} J={j}: defect {defect}");
            }
        }
    }

    proptest! {
        #[test]
        fn legendre_bounded_by_endpoint_value(j in 1usize..40, t in 0.0f64..=1.0) {
            let spec = BasisSpec::legendre(j).unwrap();
            let v = spec.value(j, t).unwrap();
            prop_assert!(v.abs() <= (2.0 * j as f64 - 1.0).sqrt() * (1.0 + 1e-12));
        }
    }
}
