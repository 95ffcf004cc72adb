//! Independent reference computations shared by the integration and
//! acceptance tests. Nothing here calls the code path it is used to check.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use tempered_gp::quad::adaptive_simpson;

/// Mean and batch-means standard error of an autocorrelated series.
pub fn batch_means(series: &[f64], batches: usize) -> (f64, f64) {
    let len = series.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| series[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_logistic(x: f64) -> f64 {
    -(if x > 0.0 { (-x).exp().ln_1p() } else { -x + x.exp().ln_1p() })
}

/// `E[σ(m + s z)]`, `z ~ N(0,1)`, by a 401-point trapezoid over ±10.
pub fn expected_logistic(m: f64, s: f64) -> f64 {
    let n = 400;
    let h = 20.0 / n as f64;
    let mut total = 0.0;
    for k in 0..=n {
        let z = -10.0 + h * k as f64;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        total += w * (-0.5 * z * z).exp() * logistic(m + s * z);
    }
    total * h / (2.0 * std::f64::consts::PI).sqrt()
}

fn inv2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

/// Predictive `P(y* = 0)` for binary tempered GP classification with two
/// training points, by nested adaptive quadrature over the latent difference
/// `d = f₀ − f₁ ~ N(0, 2T K)`, likelihood `∏ σ(sᵢ dᵢ)^{1/T}`.
///
/// `k` is the 2×2 training Gram matrix, `k_star` the cross-covariances of the
/// test point with the two training points and `k_ss` its prior variance.
pub fn binary_two_point_predictive(
    k: [[f64; 2]; 2],
    labels: [usize; 2],
    t: f64,
    k_star: [f64; 2],
    k_ss: f64,
) -> f64 {
    let kinv = inv2(k);
    let w = [
        kinv[0][0] * k_star[0] + kinv[0][1] * k_star[1],
        kinv[1][0] * k_star[0] + kinv[1][1] * k_star[1],
    ];
    let cond_var = 2.0 * t * (k_ss - (w[0] * k_star[0] + w[1] * k_star[1])).max(0.0);
    let cond_sd = cond_var.sqrt();
    let prior = [[2.0 * t * k[0][0], 2.0 * t * k[0][1]], [2.0 * t * k[1][0], 2.0 * t * k[1][1]]];
    let pinv = inv2(prior);
    let sign = |y: usize| if y == 0 { 1.0 } else { -1.0 };
    let log_post = |d0: f64, d1: f64| {
        let quad = pinv[0][0] * d0 * d0 + 2.0 * pinv[0][1] * d0 * d1 + pinv[1][1] * d1 * d1;
        -0.5 * quad + (log_logistic(sign(labels[0]) * d0) + log_logistic(sign(labels[1]) * d1)) / t
    };
    let half0 = 12.0 * prior[0][0].sqrt();
    let half1 = 12.0 * prior[1][1].sqrt();
    let mut peak = f64::NEG_INFINITY;
    for a in 0..=200 {
        for b in 0..=200 {
            let d0 = -half0 + 2.0 * half0 * a as f64 / 200.0;
            let d1 = -half1 + 2.0 * half1 * b as f64 / 200.0;
            peak = peak.max(log_post(d0, d1));
        }
    }
    let log_post = |d0: f64, d1: f64| log_post(d0, d1) - peak;
    let mass = |weighted: bool| {
        adaptive_simpson(
            |d0| {
                adaptive_simpson(
                    |d1| {
                        let p = log_post(d0, d1).exp();
                        if weighted {
                            p * expected_logistic(w[0] * d0 + w[1] * d1, cond_sd)
                        } else {
                            p
                        }
                    },
                    -half1,
                    half1,
                    16,
                    1e-8,
                )
                .unwrap()
            },
            -half0,
            half0,
            16,
            1e-6,
        )
        .unwrap()
    };
    mass(true) / mass(false)
}

/// Empirical covariance of the final pre-activations of randomly initialized
/// fully connected rectifier networks with `depth` hidden layers of `width`
/// units, averaged over units and `networks` independent draws.
///
/// The first layer's weights are drawn explicitly. For later layers the
/// pre-activations given the previous layer's outputs `H` are jointly Gaussian
/// across inputs with covariance `σ_w² H Hᵀ / width + σ_b²`, independently per
/// unit, so they are drawn from that distribution directly; this is the same
/// distribution as multiplying by an explicit `width × width` weight matrix.
pub fn finite_width_covariance(
    inputs: &DMatrix<f64>,
    depth: usize,
    sigma_w2: f64,
    sigma_b2: f64,
    width: usize,
    networks: usize,
    seed: u64,
) -> DMatrix<f64> {
    let m = inputs.nrows();
    let d = inputs.ncols();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut acc = DMatrix::<f64>::zeros(m, m);
    for _ in 0..networks {
        let w0 = DMatrix::from_fn(d, width, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b0 = DMatrix::from_fn(1, width, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut z = inputs * w0 * (sigma_w2 / d as f64).sqrt();
        for i in 0..m {
            for u in 0..width {
                z[(i, u)] += sigma_b2.sqrt() * b0[(0, u)];
            }
        }
        for _ in 0..depth {
            let h = z.map(|v| v.max(0.0));
            let mut cov = &h * h.transpose() * (sigma_w2 / width as f64);
            cov.add_scalar_mut(sigma_b2);
            for i in 0..m {
                cov[(i, i)] += 1e-12;
            }
            let l = cov.cholesky().expect("layer covariance is PSD").unpack();
            let e = DMatrix::from_fn(m, width, |_, _| rng.sample::<f64, _>(StandardNormal));
            z = l * e;
        }
        acc += &z * z.transpose() / width as f64;
    }
    acc / networks as f64
}
