//! Temperature grids and sweep records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a temperature sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub temperature: f64,
    pub metrics: BTreeMap<String, f64>,
    pub seed: u64,
}

impl SweepRecord {
    pub fn new(temperature: f64, seed: u64) -> Self {
        Self {
            temperature,
            metrics: BTreeMap::new(),
            seed,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn metric(&self, name: &str) -> Result<f64> {
        self.metrics
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("record has no metric {name}")))
    }
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || count == 0 {
        return Err(Error::InvalidArgument(format!("bad log grid [{lo}, {hi}] x {count}")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|k| {
            if k == 0 {
                lo
            } else if k + 1 == count {
                hi
            } else {
                (a + (b - a) * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

pub fn validate_temperatures(temperatures: &[f64]) -> Result<()> {
    if temperatures.is_empty() {
        return Err(Error::EmptyInput);
    }
    match temperatures.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
        Some(&t) => Err(Error::NonPositiveTemperature(t)),
        None => Ok(()),
    }
}

/// Index of the smallest value; ties go to the smallest temperature.
pub fn argmin_temperature(temperatures: &[f64], values: &[f64]) -> Result<usize> {
    if temperatures.len() != values.len() {
        return Err(Error::LengthMismatch {
            left: temperatures.len(),
            right: values.len(),
        });
    }
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut best = 0;
    for i in 1..values.len() {
        let better = values[i] < values[best]
            || (values[i] == values[best] && temperatures[i] < temperatures[best]);
        if better {
            best = i;
        }
    }
    Ok(best)
}
