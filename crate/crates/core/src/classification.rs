//! Tempered GP classification.
//!
//! Each of the `C` latent columns is an independent GP with kernel `K`. At
//! temperature `T` the sampled posterior over the training latents `F` has
//! prior `N(0, T·K(X,X))` per column and likelihood
//! `∏ᵢ softmax(fᵢ)_{yᵢ}^{1/T}`. Posterior draws come from elliptical slice
//! sampling; test predictions draw `f*` from the conditional Gaussian given
//! each retained `F` and average the softmax.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::kernels::{gram, gram_symmetric, kernel_diag, KernelSpec};
use crate::linalg::{cholesky, log_sum_exp, mvn_sample_columns, softmax_into, JitterPolicy, SpdFactor};
use crate::rng::{RngStream, StreamRng};
use crate::sweep::{validate_temperatures, SweepRecord};

/// Log-probabilities are floored here before averaging.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Shrinks after which a bracket is treated as collapsed onto the current state.
const MAX_SHRINKS: usize = 10_000;

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(t))
    }
}

fn check_labels(labels: &[usize], class_count: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= class_count) {
        Some(&label) => Err(Error::LabelOutOfRange { label, class_count }),
        None => Ok(()),
    }
}

/// `(1/T) Σᵢ [F_{i,yᵢ} − logsumexp(F_{i,·})]`.
pub fn tempered_log_likelihood(f: &DMatrix<f64>, labels: &[usize], t: f64) -> Result<f64> {
    check_temperature(t)?;
    if labels.len() != f.nrows() {
        return Err(Error::LengthMismatch {
            left: f.nrows(),
            right: labels.len(),
        });
    }
    check_labels(labels, f.ncols())?;
    let mut row = vec![0.0; f.ncols()];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        for (c, r) in row.iter_mut().enumerate() {
            *r = f[(i, c)];
        }
        total += f[(i, y)] - log_sum_exp(&row)?;
    }
    Ok(total / t)
}

/// Training latents with their cached tempered log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    f: DMatrix<f64>,
    log_likelihood: f64,
}

impl LatentState {
    pub fn new(f: DMatrix<f64>, labels: &[usize], t: f64) -> Result<Self> {
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let log_likelihood = tempered_log_likelihood(&f, labels, t)?;
        Ok(Self { f, log_likelihood })
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.f
    }
}

/// Point on the ellipse through `current` and `aux`: `current cos θ + aux sin θ`.
pub fn ellipse_point(current: &DMatrix<f64>, aux: &DMatrix<f64>, theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    current.zip_map(aux, |f, v| f * c + v * s)
}

/// Result of one elliptical slice update.
#[derive(Debug, Clone)]
pub struct SliceMove {
    pub state: DMatrix<f64>,
    pub log_likelihood: f64,
    /// Likelihood evaluations spent, including the accepted one.
    pub proposals: usize,
}

/// One elliptical slice sampling update for a zero-mean Gaussian prior whose
/// columns are independent with covariance given by `prior`.
pub fn elliptical_slice<R, L>(
    current: &DMatrix<f64>,
    current_log_lik: f64,
    mut log_lik: L,
    prior: &SpdFactor,
    rng: &mut R,
) -> Result<SliceMove>
where
    R: Rng + ?Sized,
    L: FnMut(&DMatrix<f64>) -> f64,
{
    if current.nrows() != prior.dimension() {
        return Err(Error::DimensionMismatch {
            expected: prior.dimension(),
            found: current.nrows(),
        });
    }
    if !current_log_lik.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }
    let aux = mvn_sample_columns(prior, current.ncols(), rng);
    let threshold = current_log_lik + rng.random::<f64>().ln();
    let mut theta = rng.random::<f64>() * 2.0 * PI;
    let (mut lo, mut hi) = (theta - 2.0 * PI, theta);
    for proposals in 1..=MAX_SHRINKS {
        let proposal = ellipse_point(current, &aux, theta);
        let ll = log_lik(&proposal);
        if ll.is_nan() {
            return Err(Error::NonFiniteLikelihood);
        }
        if ll > threshold {
            return Ok(SliceMove {
                state: proposal,
                log_likelihood: ll,
                proposals,
            });
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        theta = lo + rng.random::<f64>() * (hi - lo);
    }
    // The bracket has collapsed onto θ = 0, i.e. the current state.
    Ok(SliceMove {
        state: current.clone(),
        log_likelihood: current_log_lik,
        proposals: MAX_SHRINKS,
    })
}

/// Elliptical slice update of the training latents under the tempered softmax
/// likelihood; `prior_factor` factors `T·K(X,X)`.
pub fn ess_transition<R: Rng + ?Sized>(
    state: &LatentState,
    labels: &[usize],
    t: f64,
    prior_factor: &SpdFactor,
    rng: &mut R,
) -> Result<LatentState> {
    Ok(ess_transition_counted(state, labels, t, prior_factor, rng)?.0)
}

fn ess_transition_counted<R: Rng + ?Sized>(
    state: &LatentState,
    labels: &[usize],
    t: f64,
    prior_factor: &SpdFactor,
    rng: &mut R,
) -> Result<(LatentState, usize)> {
    check_temperature(t)?;
    check_labels(labels, state.f.ncols())?;
    let mut row = vec![0.0; state.f.ncols()];
    let lik = |f: &DMatrix<f64>| {
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            for (c, r) in row.iter_mut().enumerate() {
                *r = f[(i, c)];
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += f[(i, y)] - lse;
        }
        total / t
    };
    let mv = elliptical_slice(&state.f, state.log_likelihood, lik, prior_factor, rng)?;
    Ok((
        LatentState {
            f: mv.state,
            log_likelihood: mv.log_likelihood,
        },
        mv.proposals,
    ))
}

fn default_chains() -> usize {
    4
}
fn default_burn_in() -> usize {
    1000
}
fn default_samples() -> usize {
    500
}
fn default_thinning() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EssConfig {
    #[serde(default = "default_chains")]
    pub n_chains: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_samples")]
    pub n_samples_per_chain: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
}

impl Default for EssConfig {
    fn default() -> Self {
        Self {
            n_chains: default_chains(),
            burn_in: default_burn_in(),
            n_samples_per_chain: default_samples(),
            thinning: default_thinning(),
        }
    }
}

impl EssConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_samples_per_chain == 0 || self.thinning == 0 {
            return Err(Error::InvalidArgument(
                "n_chains, n_samples_per_chain and thinning must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.n_chains * self.n_samples_per_chain
    }
}

/// Per-run sampler diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub jitter_used: f64,
    /// Mean likelihood evaluations per transition, one entry per chain.
    pub mean_proposals: Vec<f64>,
}

/// Retained posterior draws of the training latents, ordered by
/// `(chain, sample)`.
#[derive(Debug, Clone)]
pub struct LatentSampleSet {
    pub samples: Vec<DMatrix<f64>>,
    pub temperature: f64,
    pub kernel: KernelSpec,
    pub train_inputs: Arc<DMatrix<f64>>,
    pub config: EssConfig,
    pub seed: u64,
    pub class_count: usize,
    pub stats: SamplerStats,
    kernel_factor: Arc<SpdFactor>,
}

impl LatentSampleSet {
    /// Builds a sample set from externally produced draws, factoring
    /// `K(X,X)` for later predictions.
    pub fn from_parts(
        samples: Vec<DMatrix<f64>>,
        temperature: f64,
        kernel: KernelSpec,
        train_inputs: DMatrix<f64>,
        config: EssConfig,
        seed: u64,
    ) -> Result<Self> {
        check_temperature(temperature)?;
        let first = samples.first().ok_or(Error::EmptyInput)?;
        let class_count = first.ncols();
        if samples
            .iter()
            .any(|s| s.shape() != (train_inputs.nrows(), class_count) || s.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument("samples must be finite n×C matrices".into()));
        }
        let factor = cholesky(&gram_symmetric(&kernel, &train_inputs)?, &JitterPolicy::default())?;
        Ok(Self {
            samples,
            temperature,
            kernel,
            train_inputs: Arc::new(train_inputs),
            config,
            seed,
            class_count,
            stats: SamplerStats {
                jitter_used: factor.jitter_used(),
                mean_proposals: Vec::new(),
            },
            kernel_factor: Arc::new(factor),
        })
    }

    /// Chain index of every retained sample, parallel to `samples`.
    fn chain_of(&self, index: usize) -> usize {
        let per_chain = self.samples.len() / self.config.n_chains.max(1);
        if per_chain == 0 {
            0
        } else {
            (index / per_chain).min(self.config.n_chains.saturating_sub(1))
        }
    }

    pub fn n_chains(&self) -> usize {
        if self.samples.len() % self.config.n_chains.max(1) == 0 {
            self.config.n_chains.max(1)
        } else {
            1
        }
    }
}

/// GP prior over the training latents: the kernel and one factorization of
/// the unscaled `K(X,X)`, reused across temperatures.
#[derive(Debug, Clone)]
pub struct ClassificationPrior {
    kernel: KernelSpec,
    train_inputs: Arc<DMatrix<f64>>,
    factor: Arc<SpdFactor>,
}

impl ClassificationPrior {
    pub fn fit(kernel: &KernelSpec, train_inputs: &DMatrix<f64>) -> Result<Self> {
        kernel.validate()?;
        let factor = cholesky(&gram_symmetric(kernel, train_inputs)?, &JitterPolicy::default())?;
        Ok(Self {
            kernel: kernel.clone(),
            train_inputs: Arc::new(train_inputs.clone()),
            factor: Arc::new(factor),
        })
    }

    pub fn jitter_used(&self) -> f64 {
        self.factor.jitter_used()
    }

    /// Runs `config.n_chains` chains from `F = 0`; chain `c` draws from
    /// stream `c` under `seed`.
    pub fn sample(
        &self,
        labels: &[usize],
        class_count: usize,
        t: f64,
        config: &EssConfig,
        seed: u64,
    ) -> Result<LatentSampleSet> {
        check_temperature(t)?;
        config.validate()?;
        if class_count < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if labels.len() != self.train_inputs.nrows() {
            return Err(Error::LengthMismatch {
                left: self.train_inputs.nrows(),
                right: labels.len(),
            });
        }
        check_labels(labels, class_count)?;
        let prior = self.factor.scaled(t)?;
        let n = labels.len();
        let chains: Vec<(Vec<DMatrix<f64>>, f64)> = (0..config.n_chains)
            .into_par_iter()
            .map(|chain| {
                let mut rng = RngStream::new(seed, chain as u64).rng();
                run_chain(&prior, labels, class_count, n, t, config, &mut rng)
            })
            .collect::<Result<_>>()?;
        let mut samples = Vec::with_capacity(config.total_samples());
        let mut mean_proposals = Vec::with_capacity(config.n_chains);
        for (draws, proposals) in chains {
            samples.extend(draws);
            mean_proposals.push(proposals);
        }
        Ok(LatentSampleSet {
            samples,
            temperature: t,
            kernel: self.kernel.clone(),
            train_inputs: Arc::clone(&self.train_inputs),
            config: config.clone(),
            seed,
            class_count,
            stats: SamplerStats {
                jitter_used: self.factor.jitter_used(),
                mean_proposals,
            },
            kernel_factor: Arc::clone(&self.factor),
        })
    }
}

fn run_chain(
    prior: &SpdFactor,
    labels: &[usize],
    class_count: usize,
    n: usize,
    t: f64,
    config: &EssConfig,
    rng: &mut StreamRng,
) -> Result<(Vec<DMatrix<f64>>, f64)> {
    let mut state = LatentState::new(DMatrix::zeros(n, class_count), labels, t)?;
    let steps = config.burn_in + config.n_samples_per_chain * config.thinning;
    let mut draws = Vec::with_capacity(config.n_samples_per_chain);
    let mut proposals = 0usize;
    for step in 1..=steps {
        let (next, used) = ess_transition_counted(&state, labels, t, prior, rng)?;
        state = next;
        proposals += used;
        if step > config.burn_in && (step - config.burn_in) % config.thinning == 0 {
            draws.push(state.f.clone());
        }
    }
    Ok((draws, proposals as f64 / steps.max(1) as f64))
}

pub fn sample_latent_posterior(
    kernel: &KernelSpec,
    train: &LabeledDataset,
    t: f64,
    config: &EssConfig,
    seed: u64,
) -> Result<LatentSampleSet> {
    let (labels, class_count) = train.class_labels()?;
    ClassificationPrior::fit(kernel, &train.inputs)?.sample(labels, class_count, t, config, seed)
}

/// Monte Carlo predictive class probabilities, one `p × C` matrix per chain.
pub fn predictive_class_probs_by_chain<R: Rng + ?Sized>(
    samples: &LatentSampleSet,
    test_inputs: &DMatrix<f64>,
    draws_per_sample: usize,
    rng: &mut R,
) -> Result<Vec<DMatrix<f64>>> {
    if draws_per_sample == 0 {
        return Err(Error::InvalidArgument("draws_per_sample must be positive".into()));
    }
    if samples.samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if test_inputs.ncols() != samples.train_inputs.ncols() {
        return Err(Error::DimensionMismatch {
            expected: samples.train_inputs.ncols(),
            found: test_inputs.ncols(),
        });
    }
    let t = samples.temperature;
    let p = test_inputs.nrows();
    let c = samples.class_count;
    let factor = &samples.kernel_factor;
    let cross = gram(&samples.kernel, &samples.train_inputs, test_inputs)?;
    let prior_var = kernel_diag(&samples.kernel, test_inputs)?;
    // The T factors cancel in the conditional mean K*ᵀ K⁻¹ F and survive in
    // the conditional variance T (k** − k*ᵀ K⁻¹ k*).
    let half = factor.solve_lower(&cross)?;
    let weights = factor
        .lower_triangular()
        .tr_solve_lower_triangular(&half)
        .ok_or(Error::NotPositiveDefinite { jitter: factor.jitter_used() })?
        .transpose();
    let cond_sd: Vec<f64> = (0..p)
        .map(|j| (t * (prior_var[j] - half.column(j).norm_squared()).max(0.0)).sqrt())
        .collect();

    let n_chains = samples.n_chains();
    let mut sums = vec![DMatrix::<f64>::zeros(p, c); n_chains];
    let mut counts = vec![0usize; n_chains];
    let mut logits = vec![0.0; c];
    let mut probs = vec![0.0; c];
    for (k, f) in samples.samples.iter().enumerate() {
        let chain = if n_chains == 1 { 0 } else { samples.chain_of(k) };
        let means = &weights * f;
        let acc = &mut sums[chain];
        for _ in 0..draws_per_sample {
            for j in 0..p {
                for (cls, l) in logits.iter_mut().enumerate() {
                    *l = means[(j, cls)] + cond_sd[j] * rng.sample::<f64, _>(StandardNormal);
                }
                softmax_into(&logits, &mut probs);
                for (cls, q) in probs.iter().enumerate() {
                    acc[(j, cls)] += q;
                }
            }
        }
        counts[chain] += draws_per_sample;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| normalize_rows(s / n as f64))
        .collect())
}

fn normalize_rows(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in m.row_iter_mut() {
        let total: f64 = row.iter().sum();
        row /= total;
    }
    m
}

/// Predictive class probabilities averaged over every retained sample and
/// `draws_per_sample` conditional draws of `f*` per sample.
pub fn predictive_class_probs<R: Rng + ?Sized>(
    samples: &LatentSampleSet,
    test_inputs: &DMatrix<f64>,
    draws_per_sample: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let per_chain = predictive_class_probs_by_chain(samples, test_inputs, draws_per_sample, rng)?;
    let k = per_chain.len() as f64;
    let mut total = DMatrix::zeros(per_chain[0].nrows(), per_chain[0].ncols());
    for m in &per_chain {
        total += m;
    }
    Ok(normalize_rows(total / k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub mean_log_predictive: f64,
    pub top1_accuracy: f64,
}

/// Mean log predictive probability (floored at 1e-12) and top-1 accuracy;
/// argmax ties go to the smallest class index.
pub fn classification_metrics(probs: &DMatrix<f64>, labels: &[usize]) -> Result<ClassificationMetrics> {
    if probs.nrows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probs.nrows(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_labels(labels, probs.ncols())?;
    let mut log_total = 0.0;
    let mut correct = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        log_total += probs[(i, y)].max(PROBABILITY_FLOOR).ln();
        let mut best = 0;
        for c in 1..probs.ncols() {
            if probs[(i, c)] > probs[(i, best)] {
                best = c;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    let n = labels.len() as f64;
    Ok(ClassificationMetrics {
        mean_log_predictive: log_total / n,
        top1_accuracy: correct as f64 / n,
    })
}

fn default_draws() -> usize {
    8
}

/// Everything a classification sweep needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationSweepConfig {
    #[serde(default)]
    pub ess: EssConfig,
    #[serde(default = "default_draws")]
    pub draws_per_sample: usize,
}

impl Default for ClassificationSweepConfig {
    fn default() -> Self {
        Self {
            ess: EssConfig::default(),
            draws_per_sample: default_draws(),
        }
    }
}

/// Jackknife standard error from leave-one-chain-out estimates (0 for one
/// chain). For a plain mean over chains this is the usual standard error of
/// the mean; for pooled-predictive metrics it also accounts for argmax flips
/// that per-chain averages smooth over.
fn jackknife_standard_error(leave_one_out: &[f64]) -> f64 {
    let k = leave_one_out.len();
    if k < 2 {
        return 0.0;
    }
    let mean = leave_one_out.iter().sum::<f64>() / k as f64;
    let ss = leave_one_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (ss * (k - 1) as f64 / k as f64).sqrt()
}

/// One row per temperature with `test_log_likelihood`, `top1_accuracy`, their
/// leave-one-chain-out jackknife standard errors (`*_se`) and `mean_proposals`.
/// Temperature `i` samples under the child seed `derive_seed(seed, i)`: chains
/// take streams `0..n_chains`, predictive draws take stream `n_chains`.
pub fn classification_temperature_sweep(
    kernel: &KernelSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
    temperatures: &[f64],
    config: &ClassificationSweepConfig,
    seed: u64,
) -> Result<Vec<SweepRecord>> {
    validate_temperatures(temperatures)?;
    let (labels, class_count) = train.class_labels()?;
    let (test_labels, test_classes) = test.class_labels()?;
    if test_classes != class_count {
        return Err(Error::InvalidArgument(format!(
            "train has {class_count} classes, test has {test_classes}"
        )));
    }
    let prior = ClassificationPrior::fit(kernel, &train.inputs)?;
    let mut records = Vec::with_capacity(temperatures.len());
    for (i, &t) in temperatures.iter().enumerate() {
        let child = RngStream::derive_seed(seed, i as u64);
        let set = prior.sample(labels, class_count, t, &config.ess, child)?;
        let mut rng = RngStream::new(child, config.ess.n_chains as u64).rng();
        let per_chain =
            predictive_class_probs_by_chain(&set, &test.inputs, config.draws_per_sample, &mut rng)?;
        let mut total = DMatrix::zeros(test.len(), class_count);
        for m in &per_chain {
            total += m;
        }
        let k = per_chain.len();
        let overall = classification_metrics(&normalize_rows(&total / k as f64), test_labels)?;
        let mut ll = Vec::with_capacity(k);
        let mut acc = Vec::with_capacity(k);
        if k > 1 {
            for m in &per_chain {
                let rest = normalize_rows((&total - m) / (k - 1) as f64);
                let metrics = classification_metrics(&rest, test_labels)?;
                ll.push(metrics.mean_log_predictive);
                acc.push(metrics.top1_accuracy);
            }
        }
        let proposals = set.stats.mean_proposals.iter().sum::<f64>()
            / set.stats.mean_proposals.len().max(1) as f64;
        records.push(
            SweepRecord::new(t, seed)
                .with("test_log_likelihood", overall.mean_log_predictive)
                .with("top1_accuracy", overall.top1_accuracy)
                .with("test_log_likelihood_se", jackknife_standard_error(&ll))
                .with("top1_accuracy_se", jackknife_standard_error(&acc))
                .with("mean_proposals", proposals)
                .with("jitter_used", prior.jitter_used()),
        );
    }
    Ok(records)
}
