//! Sieve estimation of evolutionary factor models for high-dimensional
//! locally stationary time series, with a bootstrap-assisted test for static
//! factor loadings.

pub mod basis;
pub mod covariance;
pub mod error;
pub mod factors;
pub mod forecast;
pub mod panel;
pub mod sim;
pub mod tuning;

pub use basis::{BasisFamily, BasisSpec};
pub use covariance::{fit_sieve, gamma_hat, LocalQuadForm, SieveModel};
pub use error::{Error, Result};
pub use factors::{EigenSystem, FactorCount, FactorCountRule, FactorStructure};
pub use panel::PanelSeries;
