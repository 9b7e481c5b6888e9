//! Accuracy metrics of estimated loading spans against simulation truth.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sim::designs::SimulationTruth;

const ORTHONORMAL_TOL: f64 = 1e-8;

fn check_spans(truth: &SimulationTruth, spans: &[DMatrix<f64>], op: &'static str) -> Result<()> {
    let n = truth.x.n();
    if spans.len() != n {
        return Err(Error::invalid(op, format!("expected {n} fitted spans, got {}", spans.len())));
    }
    if let Some(i) = spans.iter().position(|v| v.nrows() != truth.x.p()) {
        return Err(Error::invalid(
            op,
            format!("span at time {} has {} rows, panel has {}", i + 1, spans[i].nrows(), truth.x.p()),
        ));
    }
    Ok(())
}

/// Mean squared reconstruction error `(1/(np)) sum_i |V V^T X_i - A z_i|^2`
/// before the square root.
pub fn mean_squared_error(truth: &SimulationTruth, spans: &[DMatrix<f64>]) -> Result<f64> {
    check_spans(truth, spans, "sim-lab.rmse_metric")?;
    let (n, p) = (truth.x.n(), truth.x.p());
    let mut total = 0.0;
    for i in 1..=n {
        let v = &spans[i - 1];
        let x = truth.x.observation(i);
        let projected = v * (v.transpose() * &x);
        total += (projected - truth.common(i)).norm_squared();
    }
    Ok(total / (n * p) as f64)
}

/// Root of [`mean_squared_error`].
pub fn rmse_metric(truth: &SimulationTruth, spans: &[DMatrix<f64>]) -> Result<f64> {
    mean_squared_error(truth, spans).map(f64::sqrt)
}

fn check_orthonormal(v: &DMatrix<f64>) -> Result<()> {
    let gram = v.transpose() * v;
    let defect = (gram - DMatrix::identity(v.ncols(), v.ncols())).amax();
    if !(defect <= ORTHONORMAL_TOL) {
        return Err(Error::invalid(
            "sim-lab.angle_metric",
            format!("columns are not orthonormal (Gram defect {defect:.3e})"),
        ));
    }
    Ok(())
}

/// Span distance `1 - |V_hat^T V|_F^2 / max(d_hat, d)`.
///
/// With equal column counts this is `1 - tr(V_hat V_hat^T V V^T) / d`; when
/// the counts differ the larger one normalizes, so a missed or spurious
/// direction costs its share of the distance. Two empty spans are at
/// distance 0.
pub fn angle_metric(v_hat: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    if v_hat.nrows() != v.nrows() {
        return Err(Error::invalid(
            "sim-lab.angle_metric",
            format!("row mismatch: {} vs {}", v_hat.nrows(), v.nrows()),
        ));
    }
    check_orthonormal(v_hat)?;
    check_orthonormal(v)?;
    let d = v_hat.ncols().max(v.ncols());
    if d == 0 {
        return Ok(0.0);
    }
    let overlap = (v_hat.transpose() * v).norm_squared();
    Ok((1.0 - overlap / d as f64).clamp(0.0, 1.0))
}

/// Time average of [`angle_metric`] against the true spans.
pub fn mean_angle(truth: &SimulationTruth, spans: &[DMatrix<f64>]) -> Result<f64> {
    check_spans(truth, spans, "sim-lab.angle_metric")?;
    let n = truth.x.n();
    let mut total = 0.0;
    for i in 1..=n {
        total += angle_metric(&spans[i - 1], &truth.span(i))?;
    }
    Ok(total / n as f64)
}
