//! OSPA distance and its network and time averages.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OspaConfig {
    pub order: f64,
    pub cutoff: f64,
    /// Compare only the first two coordinates (positions).
    pub positions_only: bool,
}

impl Default for OspaConfig {
    fn default() -> Self {
        Self { order: 1.0, cutoff: 100.0, positions_only: true }
    }
}

impl OspaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.order >= 1.0 && self.order.is_finite()) {
            return Err(Error::Config("OSPA order must be at least 1".into()));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::Config("OSPA cutoff must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OspaResult {
    pub distance: f64,
    pub localization: f64,
    pub cardinality: f64,
}

fn project(v: &DVector<f64>, positions_only: bool) -> DVector<f64> {
    if positions_only && v.len() > 2 {
        v.rows(0, 2).into_owned()
    } else {
        v.clone()
    }
}

/// Combines matched-pair terms and the unmatched count into the result.
/// Terms are summed in ascending order so that equal assignments give
/// bit-identical distances however they were found.
pub fn ospa_from_terms(mut terms: Vec<f64>, unmatched: usize, n: usize, config: &OspaConfig) -> OspaResult {
    if n == 0 {
        return OspaResult { distance: 0.0, localization: 0.0, cardinality: 0.0 };
    }
    terms.sort_by(f64::total_cmp);
    let loc: f64 = terms.iter().sum();
    let card = config.cutoff.powf(config.order) * unmatched as f64;
    let nf = n as f64;
    let inv = 1.0 / config.order;
    OspaResult {
        distance: ((loc + card) / nf).powf(inv),
        localization: (loc / nf).powf(inv),
        cardinality: (card / nf).powf(inv),
    }
}

/// `min(c, |x - y|)^p`, the per-pair OSPA cost.
pub fn cutoff_cost(x: &DVector<f64>, y: &DVector<f64>, config: &OspaConfig) -> f64 {
    (x - y).norm().min(config.cutoff).powf(config.order)
}

pub fn ospa(x: &[DVector<f64>], y: &[DVector<f64>], config: &OspaConfig) -> Result<OspaResult> {
    config.validate()?;
    let (small, large) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let small: Vec<_> = small.iter().map(|v| project(v, config.positions_only)).collect();
    let large: Vec<_> = large.iter().map(|v| project(v, config.positions_only)).collect();
    if let Some(d) = small.first().or(large.first()).map(DVector::len) {
        if let Some(bad) = small.iter().chain(&large).find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
        }
    }
    let (m, n) = (small.len(), large.len());
    let cost = DMatrix::from_fn(m, n, |i, j| cutoff_cost(&small[i], &large[j], config));
    let assign = assignment::solve(&cost)?;
    let terms = assign.iter().enumerate().map(|(i, &j)| cost[(i, j)]).collect();
    Ok(ospa_from_terms(terms, n - m, n, config))
}

/// Mean OSPA over sensors.
pub fn network_ospa(per_sensor: &[Vec<DVector<f64>>], truth: &[DVector<f64>], config: &OspaConfig) -> Result<f64> {
    if per_sensor.is_empty() {
        return Err(Error::InvalidArgument("network OSPA needs at least one sensor".into()));
    }
    let mut total = 0.0;
    for est in per_sensor {
        total += ospa(est, truth, config)?.distance;
    }
    Ok(total / per_sensor.len() as f64)
}

/// Arithmetic mean of per-timestep values.
pub fn time_averaged(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("time average of an empty series".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// `total_weight − true count`, per sensor.
pub fn cardinality_error(total_weights: &[f64], true_count: usize) -> Vec<f64> {
    total_weights.iter().map(|w| w - true_count as f64).collect()
}
