//! Simulation designs, accuracy metrics and a seeded Monte-Carlo harness.

pub mod designs;
pub mod metrics;
pub mod pipeline;

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use designs::{gen_design, replicate_rng, Design, SimulationSpec, SimulationTruth};
pub use metrics::{angle_metric, mean_angle, mean_squared_error, rmse_metric};
pub use pipeline::{fit_spans, OrderChoice, Pipeline, SpanEstimator, SpanFit};

use crate::error::Result;

/// What one replicate reports: named metric values and named test decisions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicateOutcome {
    pub metrics: Vec<(String, f64)>,
    pub decisions: Vec<(String, bool)>,
}

impl ReplicateOutcome {
    pub fn metric(mut self, name: impl Into<String>, value: f64) -> Self {
        self.metrics.push((name.into(), value));
        self
    }

    pub fn decision(mut self, name: impl Into<String>, reject: bool) -> Self {
        self.decisions.push((name.into(), reject));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(count)`; 0 when `count == 1`.
    pub se: f64,
    pub se_defined: bool,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub rejections: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub operation: String,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub spec: SimulationSpec,
    pub completed: usize,
    pub failures: Vec<ReplicateFailure>,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub rejections: BTreeMap<String, RejectionSummary>,
    pub runtime_seconds: f64,
}

/// Runs `pipeline(replicate, truth)` on replicates `0..spec.replicates` in parallel.
pub fn monte_carlo<F>(spec: &SimulationSpec, pipeline: F) -> Result<SimulationReport>
where
    F: Fn(usize, &SimulationTruth) -> Result<ReplicateOutcome> + Sync,
{
    let indices: Vec<usize> = (0..spec.replicates).collect();
    run_replicates(spec, &indices, pipeline)
}

/// Runs the listed replicate indices. Each replicate draws from its own
/// stream, and aggregation is in index order, so neither the listing order
/// nor the thread schedule affects the report (apart from the runtime).
pub fn run_replicates<F>(spec: &SimulationSpec, indices: &[usize], pipeline: F) -> Result<SimulationReport>
where
    F: Fn(usize, &SimulationTruth) -> Result<ReplicateOutcome> + Sync,
{
    spec.validate()?;
    let start = Instant::now();
    let mut results: Vec<(usize, Result<ReplicateOutcome>)> = indices
        .par_iter()
        .map(|&r| (r, gen_design(spec, r).and_then(|truth| pipeline(r, &truth))))
        .collect();
    results.sort_by_key(|(r, _)| *r);

    let mut failures = Vec::new();
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut decisions: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut completed = 0;
    for (replicate, result) in results {
        match result {
            Ok(outcome) => {
                completed += 1;
                for (name, v) in outcome.metrics {
                    values.entry(name).or_default().push(v);
                }
                for (name, reject) in outcome.decisions {
                    let slot = decisions.entry(name).or_default();
                    slot.0 += reject as usize;
                    slot.1 += 1;
                }
            }
            Err(e) => failures.push(ReplicateFailure {
                replicate,
                operation: e.operation().to_string(),
                cause: e.to_string(),
            }),
        }
    }
    let metrics = values.into_iter().map(|(k, v)| (k, summarize(&v))).collect();
    let rejections = decisions
        .into_iter()
        .map(|(k, (rejections, total))| {
            let rate = rejections as f64 / total as f64;
            (k, RejectionSummary { rejections, total, rate })
        })
        .collect();
    Ok(SimulationReport {
        spec: *spec,
        completed,
        failures,
        metrics,
        rejections,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    let count = values.len();
    let mean = values.iter().sum::<f64>() / count as f64;
    if count < 2 {
        return MetricSummary { mean, se: 0.0, se_defined: false, count };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
    MetricSummary {
        mean,
        se: (var / count as f64).sqrt(),
        se_defined: true,
        count,
    }
}
