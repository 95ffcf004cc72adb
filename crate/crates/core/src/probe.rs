//! Relabel-disagreement probability: given that input `x` carries label `y`,
//! how likely is a fresh label `y′` for the same `x` to differ?
//!
//! For the binary model with latent prior `f(x) ~ N(0, cI)` only the
//! difference `d = f_y − f_y′` matters. Under tempering at `T` it has prior
//! `N(0, 2cT)` and likelihood `σ(d)^{1/T}`, so
//!
//! ```text
//! p_T(y′ ≠ y | x, y) = ∫ σ(−d) σ(d)^{1/T} φ(d; 0, 2cT) dd / ∫ σ(d)^{1/T} φ(d; 0, 2cT) dd.
//! ```

use serde::{Deserialize, Serialize};

use crate::classification::LatentSampleSet;
use crate::error::{Error, Result};
use crate::linalg::{softmax_into, softplus};
use crate::quad::adaptive_simpson;

const PANELS: usize = 64;
const SCAN_POINTS: usize = 4001;

fn default_tolerance() -> f64 {
    1e-8
}
fn default_half_width() -> f64 {
    40.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Latent prior variance `c`.
    pub latent_scale: f64,
    pub temperature: f64,
    /// Relative tolerance on the returned probability.
    #[serde(default = "default_tolerance")]
    pub quadrature_tolerance: f64,
    /// Integration window half-width, in standard deviations of the tempered prior.
    #[serde(default = "default_half_width")]
    pub integration_half_width_sigmas: f64,
}

impl ProbeConfig {
    pub fn new(latent_scale: f64, temperature: f64) -> Self {
        Self {
            latent_scale,
            temperature,
            quadrature_tolerance: default_tolerance(),
            integration_half_width_sigmas: default_half_width(),
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("latent_scale", self.latent_scale),
            ("quadrature_tolerance", self.quadrature_tolerance),
            ("integration_half_width_sigmas", self.integration_half_width_sigmas),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::NonPositiveTemperature(self.temperature));
        }
        Ok(())
    }
}

struct Integrands {
    inv_t: f64,
    inv_two_var: f64,
    shift: f64,
}

impl Integrands {
    /// Unnormalized log posterior of `d`, up to the constant `shift`.
    fn log_posterior(&self, d: f64) -> f64 {
        -self.inv_t * softplus(-d) - d * d * self.inv_two_var
    }

    fn posterior(&self, d: f64) -> f64 {
        (self.log_posterior(d) - self.shift).exp()
    }

    /// Posterior weight times `σ(−d) = exp(−softplus(d))`.
    fn disagreement(&self, d: f64) -> f64 {
        (self.log_posterior(d) - softplus(d) - self.shift).exp()
    }
}

fn ratio_with_panels(ig: &Integrands, lo: f64, hi: f64, panels: usize, rel_tol: f64, scale: (f64, f64)) -> Result<f64> {
    let den = adaptive_simpson(|d| ig.posterior(d), lo, hi, panels, rel_tol * scale.0)?;
    let num = adaptive_simpson(|d| ig.disagreement(d), lo, hi, panels, rel_tol * scale.1)?;
    if !(den > 0.0) {
        return Err(Error::QuadratureNotConverged("posterior mass vanished".into()));
    }
    Ok(num / den)
}

/// Relabel-disagreement probability for the binary direct-latent model, by
/// adaptive Simpson quadrature with log-space weights.
pub fn relabel_prob_quadrature(cfg: &ProbeConfig) -> Result<f64> {
    cfg.validate()?;
    let var = 2.0 * cfg.latent_scale * cfg.temperature;
    let sd = var.sqrt();
    let half = cfg.integration_half_width_sigmas * sd;
    let (lo, hi) = (-half, half);
    let mut ig = Integrands {
        inv_t: 1.0 / cfg.temperature,
        inv_two_var: 0.5 / var,
        shift: 0.0,
    };

    // Scan for the peak so the shifted integrand is O(1) there.
    let h = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..SCAN_POINTS).map(|k| lo + h * k as f64).collect();
    ig.shift = grid
        .iter()
        .map(|&d| ig.log_posterior(d))
        .fold(f64::NEG_INFINITY, f64::max);
    let trapezoid = |f: &dyn Fn(f64) -> f64| grid.iter().map(|&d| f(d)).sum::<f64>() * h;
    let scale = (
        trapezoid(&|d| ig.posterior(d)),
        trapezoid(&|d| ig.disagreement(d)),
    );
    if !(scale.0 > 0.0 && scale.1 > 0.0) {
        return Err(Error::QuadratureNotConverged("integrand underflows on the window".into()));
    }
    let tol = cfg.quadrature_tolerance;
    let edge = ig.posterior(lo).max(ig.posterior(hi));
    if edge * (hi - lo) > tol * scale.0 {
        return Err(Error::QuadratureNotConverged(format!(
            "posterior mass at the window edge ({edge:e}) exceeds tolerance"
        )));
    }

    let coarse = ratio_with_panels(&ig, lo, hi, PANELS, 0.25 * tol, scale)?;
    let fine = ratio_with_panels(&ig, lo, hi, 2 * PANELS, 0.25 * tol, scale)?;
    if (coarse - fine).abs() > tol * fine.abs() {
        return Err(Error::QuadratureNotConverged(format!(
            "refinement moved the result from {coarse} to {fine}"
        )));
    }
    Ok(fine.clamp(f64::MIN_POSITIVE, 0.5))
}

/// One row of a probe table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub latent_scale: f64,
    pub temperature: f64,
    pub probability: f64,
    /// Probability divided by the `T = 1` probability at the same scale.
    pub ratio: f64,
}

/// Probabilities and tempered-to-Bayesian ratios over a `(c, T)` grid; `T = 1`
/// is appended to the temperature grid if absent.
pub fn relabel_ratio_curve(
    scales: &[f64],
    temperatures: &[f64],
    defaults: &ProbeConfig,
) -> Result<Vec<ProbeRow>> {
    if scales.is_empty() || temperatures.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut temps = temperatures.to_vec();
    if !temps.contains(&1.0) {
        temps.push(1.0);
    }
    let mut rows = Vec::with_capacity(scales.len() * temps.len());
    for &c in scales {
        let at = |t: f64| {
            relabel_prob_quadrature(&ProbeConfig {
                latent_scale: c,
                temperature: t,
                ..*defaults
            })
        };
        let bayes = at(1.0)?;
        for &t in &temps {
            let probability = if t == 1.0 { bayes } else { at(t)? };
            rows.push(ProbeRow {
                latent_scale: c,
                temperature: t,
                probability,
                ratio: probability / bayes,
            });
        }
    }
    Ok(rows)
}

/// Per-sample disagreement `Σ_{y′≠y} softmax(F_{i,·})_{y′}` for each retained
/// sample, in sample order.
pub fn relabel_disagreements(
    samples: &LatentSampleSet,
    point_index: usize,
    observed_label: usize,
) -> Result<Vec<f64>> {
    let first = samples.samples.first().ok_or(Error::EmptyInput)?;
    if point_index >= first.nrows() {
        return Err(Error::IndexOutOfRange {
            index: point_index,
            len: first.nrows(),
        });
    }
    if observed_label >= samples.class_count {
        return Err(Error::LabelOutOfRange {
            label: observed_label,
            class_count: samples.class_count,
        });
    }
    let mut logits = vec![0.0; samples.class_count];
    let mut probs = vec![0.0; samples.class_count];
    Ok(samples
        .samples
        .iter()
        .map(|f| {
            for (c, l) in logits.iter_mut().enumerate() {
                *l = f[(point_index, c)];
            }
            softmax_into(&logits, &mut probs);
            1.0 - probs[observed_label]
        })
        .collect())
}

/// Monte Carlo relabel-disagreement probability at a training point.
pub fn relabel_prob_mc(
    samples: &LatentSampleSet,
    point_index: usize,
    observed_label: usize,
) -> Result<f64> {
    let values = relabel_disagreements(samples, point_index, observed_label)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
