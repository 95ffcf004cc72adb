//! Exact GP regression with Gaussian observation noise, and its tempered
//! predictive.
//!
//! With `K̃ = K(X,X) + σ_ε² I` the predictive at `x*` is
//! `μ = k*ᵀ K̃⁻¹ y`, `σ² = k** − k*ᵀ K̃⁻¹ k* + σ_ε²`. Tempering at `T` keeps
//! `μ` and multiplies `σ²` by `T`, which is the same as fitting with kernel
//! `T·K` and noise variance `T·σ_ε²`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::kernels::{gram, gram_symmetric, kernel_diag, KernelSpec};
use crate::linalg::{cholesky, solve_spd_vec, JitterPolicy, SpdFactor};
use crate::sweep::{argmin_temperature, validate_temperatures, SweepRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub kernel: KernelSpec,
    /// Observation noise standard deviation σ_ε.
    pub noise_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveGaussian {
    pub mean: f64,
    pub variance: f64,
}

/// A model conditioned on training data; the factor of `K̃` is shared by
/// every prediction.
#[derive(Debug, Clone)]
pub struct RegressionPosterior {
    model: RegressionModel,
    train_inputs: DMatrix<f64>,
    factor: SpdFactor,
    alpha: DVector<f64>,
}

impl RegressionPosterior {
    pub fn fit(model: &RegressionModel, train: &LabeledDataset) -> Result<Self> {
        if !(model.noise_std >= 0.0) || !model.noise_std.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be >= 0, got {}",
                model.noise_std
            )));
        }
        model.kernel.validate()?;
        let y = train.real_targets()?;
        let mut k = gram_symmetric(&model.kernel, &train.inputs)?;
        let noise_var = model.noise_std * model.noise_std;
        for i in 0..k.nrows() {
            k[(i, i)] += noise_var;
        }
        let factor = cholesky(&k, &JitterPolicy::default())?;
        let alpha = solve_spd_vec(&factor, &y)?;
        Ok(Self {
            model: model.clone(),
            train_inputs: train.inputs.clone(),
            factor,
            alpha,
        })
    }

    pub fn jitter_used(&self) -> f64 {
        self.factor.jitter_used()
    }

    pub fn predict(&self, test_inputs: &DMatrix<f64>) -> Result<Vec<PredictiveGaussian>> {
        if test_inputs.ncols() != self.train_inputs.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.train_inputs.ncols(),
                found: test_inputs.ncols(),
            });
        }
        let cross = gram(&self.model.kernel, &self.train_inputs, test_inputs)?;
        let prior = kernel_diag(&self.model.kernel, test_inputs)?;
        let means = cross.transpose() * &self.alpha;
        let v = self.factor.solve_lower(&cross)?;
        let noise_var = self.model.noise_std * self.model.noise_std;
        Ok((0..test_inputs.nrows())
            .map(|j| {
                let explained = v.column(j).norm_squared();
                PredictiveGaussian {
                    mean: means[j],
                    variance: (prior[j] - explained).max(0.0) + noise_var,
                }
            })
            .collect())
    }
}

pub fn posterior_predict(
    model: &RegressionModel,
    train: &LabeledDataset,
    test_inputs: &DMatrix<f64>,
) -> Result<Vec<PredictiveGaussian>> {
    RegressionPosterior::fit(model, train)?.predict(test_inputs)
}

pub fn temper_predictive(pred: PredictiveGaussian, t: f64) -> Result<PredictiveGaussian> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::NonPositiveTemperature(t));
    }
    Ok(PredictiveGaussian {
        mean: pred.mean,
        variance: pred.variance * t,
    })
}

/// Mean negative log predictive density over the test targets.
pub fn gaussian_test_nll(preds: &[PredictiveGaussian], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (p, y) in preds.iter().zip(targets) {
        if !(p.variance > 0.0) {
            return Err(Error::ZeroVariance);
        }
        let r = y - p.mean;
        total += 0.5 * (2.0 * std::f64::consts::PI * p.variance).ln() + r * r / (2.0 * p.variance);
    }
    Ok(total / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSweep {
    pub records: Vec<SweepRecord>,
    pub argmin_index: usize,
}

impl RegressionSweep {
    pub fn argmin_temperature(&self) -> f64 {
        self.records[self.argmin_index].temperature
    }

    pub fn nll(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.metrics["test_nll"]).collect()
    }
}

/// Test NLL of the tempered predictive at every temperature. The posterior is
/// fitted once; tempering only rescales the variances.
pub fn regression_temperature_sweep(
    model: &RegressionModel,
    train: &LabeledDataset,
    test: &LabeledDataset,
    temperatures: &[f64],
    seed: u64,
) -> Result<RegressionSweep> {
    validate_temperatures(temperatures)?;
    let preds = posterior_predict(model, train, &test.inputs)?;
    let targets = test.real_targets()?;
    let mut records = Vec::with_capacity(temperatures.len());
    for &t in temperatures {
        let tempered: Vec<PredictiveGaussian> = preds
            .iter()
            .map(|p| temper_predictive(*p, t))
            .collect::<Result<_>>()?;
        let nll = gaussian_test_nll(&tempered, targets.as_slice())?;
        records.push(SweepRecord::new(t, seed).with("test_nll", nll));
    }
    let values: Vec<f64> = records.iter().map(|r| r.metrics["test_nll"]).collect();
    let argmin_index = argmin_temperature(temperatures, &values)?;
    Ok(RegressionSweep {
        records,
        argmin_index,
    })
}

/// Averages NLL curves over several sweeps on the same grid.
pub fn average_sweeps(sweeps: &[RegressionSweep]) -> Result<RegressionSweep> {
    let first = sweeps.first().ok_or(Error::EmptyInput)?;
    let temperatures: Vec<f64> = first.records.iter().map(|r| r.temperature).collect();
    let mut mean = vec![0.0; temperatures.len()];
    for s in sweeps {
        let nll = s.nll();
        if nll.len() != mean.len() {
            return Err(Error::LengthMismatch {
                left: mean.len(),
                right: nll.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(nll) {
            *m += v / sweeps.len() as f64;
        }
    }
    let records = temperatures
        .iter()
        .zip(&mean)
        .map(|(&t, &v)| SweepRecord::new(t, first.records[0].seed).with("test_nll", v))
        .collect();
    Ok(RegressionSweep {
        records,
        argmin_index: argmin_temperature(&temperatures, &mean)?,
    })
}
