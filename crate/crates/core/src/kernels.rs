//! Covariance functions: squared-exponential (RBF) and the NNGP kernel of a
//! fully connected rectifier network, each with an overall scale multiplier.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> f64 {
    1.0
}
fn default_depth() -> usize {
    2
}
fn default_sigma_w2() -> f64 {
    2.0
}

/// A positive-definite covariance function.
///
/// Serialized as a JSON object tagged by `family`; omitted fields take the
/// defaults (RBF: unit lengthscale and variance; NNGP: two hidden layers at
/// the rectifier critical point `sigma_w2 = 2`, `sigma_b2 = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum KernelSpec {
    #[serde(rename = "rbf")]
    Rbf {
        #[serde(default = "one")]
        lengthscale: f64,
        #[serde(default = "one")]
        variance: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    #[serde(rename = "nngp-mlp")]
    NngpMlp {
        #[serde(default = "default_depth")]
        depth: usize,
        #[serde(default = "default_sigma_w2")]
        sigma_w2: f64,
        #[serde(default)]
        sigma_b2: f64,
        #[serde(default = "one")]
        scale: f64,
    },
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64, variance: f64) -> Self {
        KernelSpec::Rbf {
            lengthscale,
            variance,
            scale: 1.0,
        }
    }

    pub fn nngp(depth: usize, sigma_w2: f64, sigma_b2: f64) -> Self {
        KernelSpec::NngpMlp {
            depth,
            sigma_w2,
            sigma_b2,
            scale: 1.0,
        }
    }

    /// Critically initialized rectifier NNGP with two hidden layers.
    pub fn nngp_critical() -> Self {
        Self::nngp(2, 2.0, 0.0)
    }

    pub fn scale(&self) -> f64 {
        match self {
            KernelSpec::Rbf { scale, .. } | KernelSpec::NngpMlp { scale, .. } => *scale,
        }
    }

    pub fn is_rbf(&self) -> bool {
        matches!(self, KernelSpec::Rbf { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            KernelSpec::Rbf {
                lengthscale,
                variance,
                scale,
            } => {
                positive("lengthscale", lengthscale)?;
                positive("variance", variance)?;
                positive("scale", scale)
            }
            KernelSpec::NngpMlp {
                depth,
                sigma_w2,
                sigma_b2,
                scale,
            } => {
                if depth == 0 {
                    return Err(Error::InvalidArgument("depth must be at least 1".into()));
                }
                positive("sigma_w2", sigma_w2)?;
                if !(sigma_b2 >= 0.0 && sigma_b2.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "sigma_b2 must be non-negative, got {sigma_b2}"
                    )));
                }
                positive("scale", scale)
            }
        }
    }
}

/// Returns `spec` with its scale multiplied by `t`.
pub fn scale_kernel(spec: &KernelSpec, t: f64) -> Result<KernelSpec> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::NonPositiveScale(t));
    }
    let mut out = spec.clone();
    match &mut out {
        KernelSpec::Rbf { scale, .. } | KernelSpec::NngpMlp { scale, .. } => *scale *= t,
    }
    Ok(out)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// One rectifier layer of the NNGP recursion. Returns the next
/// `(K(x,x′), K(x,x), K(x′,x′))`.
fn relu_layer(cross: f64, kxx: f64, kyy: f64, sigma_w2: f64, sigma_b2: f64) -> (f64, f64, f64) {
    let q = (kxx * kyy).sqrt();
    let expectation = if q > 0.0 {
        let rho = (cross / q).clamp(-1.0, 1.0);
        let theta = rho.acos();
        q * (theta.sin() + (PI - theta) * rho) / (2.0 * PI)
    } else {
        0.0
    };
    (
        sigma_b2 + sigma_w2 * expectation,
        sigma_b2 + 0.5 * sigma_w2 * kxx,
        sigma_b2 + 0.5 * sigma_w2 * kyy,
    )
}

/// Per-layer NNGP covariances `[K⁰, …, K^depth]` for one pair of inputs.
pub fn nngp_layers(
    depth: usize,
    sigma_w2: f64,
    sigma_b2: f64,
    x: &[f64],
    y: &[f64],
) -> Vec<(f64, f64, f64)> {
    let d = x.len() as f64;
    let mut layer = (
        sigma_b2 + sigma_w2 * dot(x, y) / d,
        sigma_b2 + sigma_w2 * dot(x, x) / d,
        sigma_b2 + sigma_w2 * dot(y, y) / d,
    );
    let mut out = Vec::with_capacity(depth + 1);
    out.push(layer);
    for _ in 0..depth {
        layer = relu_layer(layer.0, layer.1, layer.2, sigma_w2, sigma_b2);
        out.push(layer);
    }
    out
}

fn eval_unchecked(spec: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    match *spec {
        KernelSpec::Rbf {
            lengthscale,
            variance,
            scale,
        } => {
            let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            scale * variance * (-sq / (2.0 * lengthscale * lengthscale)).exp()
        }
        KernelSpec::NngpMlp {
            depth,
            sigma_w2,
            sigma_b2,
            scale,
        } => {
            let d = x.len() as f64;
            let (mut k, mut kxx, mut kyy) = (
                sigma_b2 + sigma_w2 * dot(x, y) / d,
                sigma_b2 + sigma_w2 * dot(x, x) / d,
                sigma_b2 + sigma_w2 * dot(y, y) / d,
            );
            for _ in 0..depth {
                (k, kxx, kyy) = relu_layer(k, kxx, kyy, sigma_w2, sigma_b2);
            }
            scale * k
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(eval_unchecked(spec, x, y))
}

fn rows_of(m: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Cross-covariance matrix `K(A, B)`; inputs are stored one per row.
pub fn gram(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    if std::ptr::eq(a, b) {
        return gram_symmetric(spec, a);
    }
    let ra = rows_of(a)?;
    let rb = rows_of(b)?;
    let rows: Vec<Vec<f64>> = ra
        .par_iter()
        .map(|x| rb.iter().map(|y| eval_unchecked(spec, x, y)).collect())
        .collect();
    Ok(DMatrix::from_fn(ra.len(), rb.len(), |i, j| rows[i][j]))
}

/// `K(A, A)`, assembled from the lower triangle so the result is exactly symmetric.
pub fn gram_symmetric(spec: &KernelSpec, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ra = rows_of(a)?;
    let n = ra.len();
    let lower: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| eval_unchecked(spec, &ra[i], &ra[j])).collect())
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if j <= i {
            lower[i][j]
        } else {
            lower[j][i]
        }
    }))
}

/// Prior variances `k(x, x)` for each row of `a`.
pub fn kernel_diag(spec: &KernelSpec, a: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(rows_of(a)?.iter().map(|x| eval_unchecked(spec, x, x)).collect())
}
