//! Dense SPD factorizations, Gaussian densities and stable reductions.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const SYMMETRY_RTOL: f64 = 1e-12;

/// Diagonal jitter multipliers, applied relative to the mean diagonal.
pub const DEFAULT_JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

/// Jitter escalation rule for [`cholesky`]: each rung adds
/// `rung * mean(diag(A))` to the diagonal until factorization succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterPolicy {
    pub ladder: Vec<f64>,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            ladder: DEFAULT_JITTER_LADDER.to_vec(),
        }
    }
}

/// Cholesky factor `L` with `A + jitter * I = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
    jitter_used: f64,
}

impl SpdFactor {
    pub fn lower_triangular(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dimension(&self) -> usize {
        self.lower.nrows()
    }

    /// `log det (A + jitter I) = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Factor of `t (A + jitter I)`, i.e. `√t L`.
    pub fn scaled(&self, t: f64) -> Result<SpdFactor> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::NonPositiveScale(t));
        }
        Ok(SpdFactor {
            lower: &self.lower * t.sqrt(),
            jitter_used: self.jitter_used * t,
        })
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// Solves `L x = rhs`.
    pub fn solve_lower(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(rhs.nrows())?;
        self.lower
            .solve_lower_triangular(rhs)
            .ok_or(Error::NotPositiveDefinite { jitter: self.jitter_used })
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                found: rows,
            });
        }
        Ok(())
    }
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    let rel = worst / scale;
    if rel > SYMMETRY_RTOL {
        return Err(Error::NotSymmetric(rel));
    }
    Ok(())
}

/// Factorizes `a` with the smallest jitter on the ladder that succeeds.
pub fn cholesky(a: &DMatrix<f64>, policy: &JitterPolicy) -> Result<SpdFactor> {
    check_symmetric(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SpdFactor {
            lower: DMatrix::zeros(0, 0),
            jitter_used: 0.0,
        });
    }
    let mean_diag = a.diagonal().mean();
    let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut last = 0.0;
    for &rung in &policy.ladder {
        let jitter = rung * base;
        last = jitter;
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        // Symmetrize so the factor is independent of which triangle is read.
        for j in 0..n {
            for i in (j + 1)..n {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            let lower = ch.unpack();
            if lower.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Ok(SpdFactor {
                    lower,
                    jitter_used: jitter,
                });
            }
        }
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

/// Solves `(A + jitter I) x = rhs` with two triangular solves.
pub fn solve_spd(factor: &SpdFactor, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let y = factor.solve_lower(rhs)?;
    factor
        .lower
        .tr_solve_lower_triangular(&y)
        .ok_or(Error::NotPositiveDefinite { jitter: factor.jitter_used })
}

pub fn solve_spd_vec(factor: &SpdFactor, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let m = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    Ok(solve_spd(factor, &m)?.column(0).into_owned())
}

/// Log density of `N(mean, A + jitter I)` at `x`.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, factor: &SpdFactor) -> Result<f64> {
    let n = factor.dimension();
    for len in [x.len(), mean.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, found: len });
        }
    }
    let diff = x - mean;
    let z = factor
        .lower
        .solve_lower_triangular(&diff)
        .ok_or(Error::NotPositiveDefinite { jitter: factor.jitter_used })?;
    Ok(-0.5 * z.norm_squared()
        - 0.5 * factor.log_det()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// One draw `mean + L z`, `z` standard normal.
pub fn mvn_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &SpdFactor,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if mean.len() != factor.dimension() {
        return Err(Error::DimensionMismatch {
            expected: factor.dimension(),
            found: mean.len(),
        });
    }
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(mean + &factor.lower * z)
}

/// `columns` independent zero-mean draws stacked as an `n × columns` matrix.
pub fn mvn_sample_columns<R: Rng + ?Sized>(
    factor: &SpdFactor,
    columns: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let n = factor.dimension();
    // Column-major fill: column c consumes the c-th block of n normals.
    let mut z = DMatrix::<f64>::zeros(n, columns);
    for v in z.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    &factor.lower * z
}

pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    Ok(max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln())
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of one row, written into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = RngStream::new(seed, 0).rng();
        let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut a = &b * b.transpose();
        for i in 0..n {
            a[(i, i)] += n as f64;
        }
        a
    }

    fn frob_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn identity_factor() {
        let f = cholesky(&DMatrix::identity(3, 3), &JitterPolicy::default()).unwrap();
        assert_eq!(f.lower_triangular(), &DMatrix::identity(3, 3));
        assert_eq!(f.jitter_used(), 0.0);
    }

    #[test]
    fn two_by_two_factor() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = cholesky(&a, &JitterPolicy::default()).unwrap();
        let l = f.lower_triangular();
        assert!((l[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
        assert!((l[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
        assert!(frob_rel(&f.reconstruct(), &a) < 1e-15);
    }

    #[test]
    fn rank_one_needs_jitter() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let f = cholesky(&a, &JitterPolicy::default()).unwrap();
        assert!(f.jitter_used() > 0.0);
        let target = &a + DMatrix::identity(2, 2) * f.jitter_used();
        assert!(frob_rel(&f.reconstruct(), &target) <= 1e-10);
    }

    #[test]
    fn asymmetric_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            cholesky(&a, &JitterPolicy::default()),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn indefinite_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky(&a, &JitterPolicy::default()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn solve_examples() {
        let id = cholesky(&DMatrix::identity(3, 3), &JitterPolicy::default()).unwrap();
        let b = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 3.0]);
        assert_eq!(solve_spd(&id, &b).unwrap(), b);

        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let f = cholesky(&a, &JitterPolicy::default()).unwrap();
        let x = solve_spd(&f, &DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert!((x[0] - 0.375).abs() < 1e-15);
        assert!((x[1] + 0.25).abs() < 1e-15);

        assert!(matches!(
            solve_spd(&f, &DMatrix::zeros(3, 1)),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn solve_residual_20() {
        let a = random_spd(20, 11);
        let f = cholesky(&a, &JitterPolicy::default()).unwrap();
        let mut rng = RngStream::new(12, 0).rng();
        let b = DMatrix::from_fn(20, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = solve_spd(&f, &b).unwrap();
        assert!((&a * x - &b).norm() / b.norm() <= 1e-8);
    }

    #[test]
    fn logpdf_examples() {
        let one = cholesky(&DMatrix::identity(1, 1), &JitterPolicy::default()).unwrap();
        let z = DVector::from_element(1, 0.0);
        let lp = mvn_logpdf(&z, &z, &one).unwrap();
        assert!((lp + 0.5 * (2.0 * PI).ln()).abs() < 1e-14);
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-12);

        let id5 = cholesky(&DMatrix::identity(5, 5), &JitterPolicy::default()).unwrap();
        let m = DVector::from_fn(5, |i, _| i as f64);
        assert!((mvn_logpdf(&m, &m, &id5).unwrap() + 2.5 * (2.0 * PI).ln()).abs() < 1e-13);

        let four = cholesky(&DMatrix::from_element(1, 1, 4.0), &JitterPolicy::default()).unwrap();
        let expected = -0.5 * 0.25 - 0.5 * 4f64.ln() - 0.5 * (2.0 * PI).ln();
        let lp = mvn_logpdf(&DVector::from_element(1, 1.0), &z, &four).unwrap();
        assert!((lp - expected).abs() < 1e-14);
    }

    #[test]
    fn logpdf_integrates_to_one() {
        let sigma2: f64 = 2.5;
        let f = cholesky(&DMatrix::from_element(1, 1, sigma2), &JitterPolicy::default()).unwrap();
        let s = sigma2.sqrt();
        let mean = DVector::from_element(1, 0.3);
        let n = 20_000;
        let (a, b) = (0.3 - 10.0 * s, 0.3 + 10.0 * s);
        let h = (b - a) / n as f64;
        let mut total = 0.0;
        for k in 0..=n {
            let x = DVector::from_element(1, a + h * k as f64);
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            total += w * mvn_logpdf(&x, &mean, &f).unwrap().exp();
        }
        assert!((total * h - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sample_determinism_and_moments() {
        let id = cholesky(&DMatrix::identity(4, 4), &JitterPolicy::default()).unwrap();
        let zero = DVector::zeros(4);
        let a = mvn_sample(&zero, &id, &mut RngStream::new(5, 0).rng()).unwrap();
        let b = mvn_sample(&zero, &id, &mut RngStream::new(5, 0).rng()).unwrap();
        assert_eq!(a, b);

        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let f = cholesky(&sigma, &JitterPolicy::default()).unwrap();
        let mut rng = RngStream::new(6, 0).rng();
        let n = 100_000;
        let mean = DVector::zeros(2);
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let x = mvn_sample(&mean, &f, &mut rng).unwrap();
            acc += &x * x.transpose();
        }
        acc /= n as f64;
        for i in 0..2 {
            for j in 0..2 {
                // Var(x_i x_j) = S_ii S_jj + S_ij^2 for zero-mean Gaussians.
                let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((acc[(i, j)] - sigma[(i, j)]).abs() < 3.0 * se, "{i}{j}");
            }
        }
    }

    #[test]
    fn sample_degenerate_scale() {
        let f = cholesky(&(DMatrix::identity(3, 3) * 1e-24), &JitterPolicy::default()).unwrap();
        let c = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let x = mvn_sample(&c, &f, &mut RngStream::new(1, 1).rng()).unwrap();
        assert!((x - c).amax() < 1e-9);
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, 1000.0]).unwrap() - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(log_sum_exp(&[0.0, -1e6]).unwrap().abs() < 1e-15);
        assert_eq!(log_sum_exp(&[]), Err(Error::EmptyInput));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn log_sum_exp_shift(v in prop::collection::vec(-50.0f64..50.0, 1..12), c in -500.0f64..500.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let lhs = log_sum_exp(&shifted).unwrap();
            let rhs = log_sum_exp(&v).unwrap() + c;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }

        #[test]
        fn factor_reconstructs_and_solves(n in 1usize..60, seed in 0u64..1000) {
            let a = random_spd(n, seed);
            let f = cholesky(&a, &JitterPolicy::default()).unwrap();
            let l = f.lower_triangular();
            for i in 0..n {
                prop_assert!(l[(i, i)] > 0.0);
                for j in (i + 1)..n {
                    prop_assert_eq!(l[(i, j)], 0.0);
                }
            }
            let target = &a + DMatrix::identity(n, n) * f.jitter_used();
            prop_assert!((f.reconstruct() - target).norm() / a.norm() <= 1e-10);
            let b = DMatrix::from_fn(n, 2, |i, j| (i as f64 + 1.0) * (j as f64 - 0.5));
            let x = solve_spd(&f, &b).unwrap();
            prop_assert!((&a * x - &b).norm() / b.norm() <= 1e-8);
        }
    }

    #[test]
    fn solve_residual_200() {
        let a = random_spd(200, 3);
        let f = cholesky(&a, &JitterPolicy::default()).unwrap();
        let b = DMatrix::from_fn(200, 1, |i, _| (i as f64).sin());
        let x = solve_spd(&f, &b).unwrap();
        assert!((&a * x - &b).norm() / b.norm() <= 1e-8);
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }
}
