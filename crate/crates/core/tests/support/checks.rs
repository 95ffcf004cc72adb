//! Statistical and numerical checks shared by the integration tests and the
//! acceptance harness. Each returns a one-line summary on success and a
//! description of the first violation otherwise.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use tempered_gp::classification::{
    elliptical_slice, predictive_class_probs, sample_latent_posterior, EssConfig,
};
use tempered_gp::data::{LabeledDataset, Split, Targets};
use tempered_gp::kernels::{gram, gram_symmetric, kernel_eval, scale_kernel, KernelSpec};
use tempered_gp::linalg::{cholesky, JitterPolicy};
use tempered_gp::probe::{relabel_disagreements, relabel_prob_quadrature, ProbeConfig};
use tempered_gp::regression::{posterior_predict, temper_predictive, RegressionModel};
use tempered_gp::rng::RngStream;

use super::oracles::{batch_means, binary_two_point_predictive, finite_width_covariance};

pub type Check = Result<String, String>;

fn grid_inputs(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |i, _| -2.0 + 4.0 * i as f64 / (n - 1) as f64)
}

/// Constant likelihood: the chain must sample the tempered prior `N(0, T K)`.
/// Means and variances within 3 batch-means standard errors; the largest
/// z-score over all 210 covariance entries below 4.
pub fn ess_prior_recovery() -> Check {
    let n = 20;
    let t = 0.3;
    let k = gram_symmetric(&KernelSpec::rbf(0.7, 1.5), &grid_inputs(n)).unwrap();
    let prior = cholesky(&k, &JitterPolicy::default()).unwrap().scaled(t).unwrap();
    let target = prior.reconstruct();
    let steps = 50_000;
    let mut rng = RngStream::new(21, 0).rng();
    let mut f = DMatrix::zeros(n, 1);
    let mut draws = Vec::with_capacity(steps);
    for _ in 0..steps {
        f = elliptical_slice(&f, 0.0, |_| 0.0, &prior, &mut rng).unwrap().state;
        draws.push(f.clone());
    }
    let mut worst = 0.0f64;
    let mut worst_moment = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            let products: Vec<f64> = draws.iter().map(|d| d[(i, 0)] * d[(j, 0)]).collect();
            let (cov, se) = batch_means(&products, 50);
            let z = (cov - target[(i, j)]).abs() / se;
            if i == j {
                if z >= 3.0 {
                    return Err(format!("variance {i}: {cov} vs {} (z = {z:.2})", target[(i, i)]));
                }
                worst_moment = worst_moment.max(z);
            }
            worst = worst.max(z);
        }
        let coord: Vec<f64> = draws.iter().map(|d| d[(i, 0)]).collect();
        let (mean, se) = batch_means(&coord, 50);
        if mean.abs() >= 3.0 * se {
            return Err(format!("mean {i}: {mean} ± {se}"));
        }
        worst_moment = worst_moment.max(mean.abs() / se);
    }
    if worst >= 4.0 {
        return Err(format!("largest covariance z-score {worst:.2}"));
    }
    Ok(format!("max moment z {worst_moment:.2}, max covariance z {worst:.2}"))
}

/// Gaussian likelihood: posterior means and variances must match the
/// conjugate closed form within 3 batch-means standard errors.
pub fn ess_conjugate_gaussian() -> Check {
    let n = 20;
    let noise_var = 0.25;
    let x = grid_inputs(n);
    let k = gram_symmetric(&KernelSpec::rbf(0.8, 1.0), &x).unwrap();
    let prior = cholesky(&k, &JitterPolicy::default()).unwrap();
    let k_eff = prior.reconstruct();
    let y = DVector::from_fn(n, |i, _| (2.0 * x[(i, 0)]).sin());

    let shifted = &k_eff + DMatrix::identity(n, n) * noise_var;
    let inv = shifted.try_inverse().unwrap();
    let post_mean = &k_eff * &inv * &y;
    let post_cov = &k_eff - &k_eff * &inv * &k_eff;

    let lik = |f: &DMatrix<f64>| {
        -(0..n).map(|i| (f[(i, 0)] - y[i]).powi(2)).sum::<f64>() / (2.0 * noise_var)
    };
    let mut rng = RngStream::new(22, 0).rng();
    let mut f = DMatrix::zeros(n, 1);
    let mut ll = lik(&f);
    for _ in 0..2_000 {
        let mv = elliptical_slice(&f, ll, lik, &prior, &mut rng).unwrap();
        f = mv.state;
        ll = mv.log_likelihood;
    }
    let samples = 50_000;
    let mut draws = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mv = elliptical_slice(&f, ll, lik, &prior, &mut rng).unwrap();
        f = mv.state;
        ll = mv.log_likelihood;
        draws.push(f.column(0).into_owned());
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        let coord: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let (mean, se) = batch_means(&coord, 50);
        let z = (mean - post_mean[i]).abs() / se;
        if z >= 3.0 {
            return Err(format!("mean {i}: {mean} vs {} ± {se}", post_mean[i]));
        }
        let sq: Vec<f64> = coord.iter().map(|v| (v - post_mean[i]).powi(2)).collect();
        let (var, se_var) = batch_means(&sq, 50);
        let z_var = (var - post_cov[(i, i)]).abs() / se_var;
        if z_var >= 3.0 {
            return Err(format!("var {i}: {var} vs {} ± {se_var}", post_cov[(i, i)]));
        }
        worst = worst.max(z).max(z_var);
    }
    Ok(format!("max z {worst:.2} over {n} means and variances"))
}

fn two_point_data() -> LabeledDataset {
    LabeledDataset::new(
        DMatrix::from_column_slice(2, 1, &[-0.5, 0.7]),
        Targets::Classes {
            labels: vec![0, 1],
            class_count: 2,
        },
        Split::Train,
        "two-point",
    )
    .unwrap()
}

/// Binary classification with two training points: predictive probabilities
/// within 0.01 of nested adaptive quadrature, at `T = 1` and `T = 0.2`.
pub fn ess_two_point_predictive() -> Check {
    let kernel = KernelSpec::rbf(1.0, 4.0);
    let train = two_point_data();
    let test = DMatrix::from_column_slice(4, 1, &[-1.5, -0.2, 0.3, 1.4]);
    let kxx = gram_symmetric(&kernel, &train.inputs).unwrap();
    let kxs = gram(&kernel, &train.inputs, &test).unwrap();
    let cfg = EssConfig {
        n_chains: 4,
        burn_in: 500,
        n_samples_per_chain: 1500,
        thinning: 2,
    };
    let mut worst = 0.0f64;
    for t in [1.0, 0.2] {
        let set = sample_latent_posterior(&kernel, &train, t, &cfg, 31).unwrap();
        let probs = predictive_class_probs(&set, &test, 8, &mut RngStream::new(31, 99).rng()).unwrap();
        for j in 0..test.nrows() {
            let reference = binary_two_point_predictive(
                [[kxx[(0, 0)], kxx[(0, 1)]], [kxx[(1, 0)], kxx[(1, 1)]]],
                [0, 1],
                t,
                [kxs[(0, j)], kxs[(1, j)]],
                kernel_eval(&kernel, &[test[(j, 0)]], &[test[(j, 0)]]).unwrap(),
            );
            let err = (probs[(j, 0)] - reference).abs();
            if err > 0.01 {
                return Err(format!(
                    "T={t} x*={}: {} vs {reference}",
                    test[(j, 0)],
                    probs[(j, 0)]
                ));
            }
            worst = worst.max(err);
        }
    }
    Ok(format!("max |Δp| {worst:.4} over 8 predictions"))
}

fn single_point(label: usize) -> LabeledDataset {
    LabeledDataset::new(
        DMatrix::from_element(1, 1, 0.0),
        Targets::Classes {
            labels: vec![label],
            class_count: 2,
        },
        Split::Train,
        "single",
    )
    .unwrap()
}

/// One training point with latent prior scale `c`: the sampled relabel
/// probability must agree with quadrature within 3 standard errors.
pub fn relabel_mc_vs_quadrature() -> Check {
    let cfg = EssConfig {
        n_chains: 1,
        burn_in: 1_000,
        n_samples_per_chain: 40_000,
        thinning: 1,
    };
    let mut worst = 0.0f64;
    for (c, t) in [(10.0, 1.0), (10.0, 0.1), (100.0, 0.03)] {
        // k(x, x) = variance for an RBF kernel, so the latent prior scale is c.
        let kernel = KernelSpec::rbf(1.0, c);
        let set = sample_latent_posterior(&kernel, &single_point(0), t, &cfg, 41).unwrap();
        let values = relabel_disagreements(&set, 0, 0).unwrap();
        let (mc, se) = batch_means(&values, 40);
        let exact = relabel_prob_quadrature(&ProbeConfig::new(c, t)).unwrap();
        let z = (mc - exact).abs() / se;
        if z >= 3.0 {
            return Err(format!("c={c} T={t}: {mc} ± {se} vs {exact}"));
        }
        let diffs: Vec<f64> = set.samples.iter().map(|f| f[(0, 0)] - f[(0, 1)]).collect();
        if batch_means(&diffs, 40).0 <= 0.0 {
            return Err(format!("c={c} T={t}: posterior does not favour the observed label"));
        }
        worst = worst.max(z);
    }
    Ok(format!("max z {worst:.2}"))
}

/// Depth-2 critical rectifier recursion against sampled networks of the given
/// width, on 10 disjoint random input pairs in 6 dimensions.
pub fn nngp_finite_width(width: usize, networks: usize, tol: f64) -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let inputs = DMatrix::from_fn(20, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
    let cov = finite_width_covariance(&inputs, 2, 2.0, 0.0, width, networks, 77);
    let spec = KernelSpec::nngp(2, 2.0, 0.0);
    let mut worst = 0.0f64;
    for p in 0..10 {
        let (a, b) = (2 * p, 2 * p + 1);
        let x: Vec<f64> = inputs.row(a).iter().copied().collect();
        let y: Vec<f64> = inputs.row(b).iter().copied().collect();
        let exact = kernel_eval(&spec, &x, &y).unwrap();
        let rel = (cov[(a, b)] - exact).abs() / exact.abs();
        if rel >= tol {
            return Err(format!("pair {p}: sampled {} vs recursion {exact} ({rel:.4})", cov[(a, b)]));
        }
        worst = worst.max(rel);
    }
    Ok(format!("max relative error {worst:.4}"))
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

/// Both tempering identities on `instances` random regression problems with
/// `n ≤ 50`: kernel `T K` without noise equals the tempered noiseless
/// posterior, and `(T K, T σ²)` equals the tempered `(K, σ²)` posterior.
pub fn tempering_equivalences(instances: u64, tol: f64) -> Check {
    let base_kernel = KernelSpec::rbf(1.2, 1.0);
    let mut worst = 0.0f64;
    for inst in 0..instances {
        let mut rng = ChaCha20Rng::seed_from_u64(1000 + inst);
        let n = rng.random_range(5..=50);
        let d = 3;
        let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let test = DMatrix::from_fn(10, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise: f64 = rng.random_range(0.05..0.5);
        let train = LabeledDataset::new(x, Targets::Real(y), Split::Train, "equivalence").unwrap();
        for noise_std in [0.0, noise] {
            let model = RegressionModel {
                kernel: base_kernel.clone(),
                noise_std,
            };
            let base = posterior_predict(&model, &train, &test).unwrap();
            for t in [0.01, 0.1, 1.0, 10.0] {
                let rescaled = RegressionModel {
                    kernel: scale_kernel(&base_kernel, t).unwrap(),
                    noise_std: noise_std * t.sqrt(),
                };
                let direct = posterior_predict(&rescaled, &train, &test).unwrap();
                for (dp, bp) in direct.iter().zip(&base) {
                    let tempered = temper_predictive(*bp, t).unwrap();
                    let err = relative(dp.mean, tempered.mean).max(relative(dp.variance, tempered.variance));
                    if err > tol {
                        return Err(format!(
                            "instance {inst} (n={n}, noise_std={noise_std}, T={t}): {dp:?} vs {tempered:?}"
                        ));
                    }
                    worst = worst.max(err);
                }
            }
        }
    }
    Ok(format!("max relative error {worst:.2e}"))
}
