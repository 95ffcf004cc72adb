//! Experiment configuration: one JSON document per run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempered_gp::classification::EssConfig;
use tempered_gp::data::{ClusterConfig, NormalizationScheme};
use tempered_gp::kernels::KernelSpec;
use tempered_gp::sweep::{log_grid, validate_temperatures};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RegressSweep,
    ClassifySweep,
    Probe,
    GenData,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RegressSweep => "regress-sweep",
            ExperimentKind::ClassifySweep => "classify-sweep",
            ExperimentKind::Probe => "probe",
            ExperimentKind::GenData => "gen-data",
        }
    }
}

/// `count` log-spaced temperatures between `lo` and `hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

fn default_truth_kernel() -> KernelSpec {
    KernelSpec::rbf(1.0, 1.0)
}

fn default_normalization() -> NormalizationScheme {
    NormalizationScheme::GlobalStandardize
}

/// Where the data comes from, tagged by `source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    /// Draws from an RBF prior plus noise; `kernel` is the generating kernel.
    RbfRegression {
        n_train: usize,
        n_test: usize,
        noise_std: f64,
        #[serde(default = "default_truth_kernel")]
        kernel: KernelSpec,
    },
    Clusters(ClusterConfig),
    /// Binary CIFAR-10 batches; `fallback` clusters are used when `dir` has no batches.
    Cifar10 {
        dir: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<Vec<u8>>,
        n_train: usize,
        n_test: usize,
        #[serde(default = "default_normalization")]
        normalization: NormalizationScheme,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fallback: Option<ClusterConfig>,
    },
    /// Columnar files as written by `gen-data`.
    Files { train: PathBuf, test: PathBuf },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionSettings {
    /// Noise levels assumed by the model; one sweep per entry.
    pub assumed_noise_std: Vec<f64>,
    /// Independent data draws per noise level, using seeds `seed, seed + 1, ...`.
    #[serde(default = "one")]
    pub replicates: usize,
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_half_width() -> f64 {
    40.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeGrid {
    pub latent_scales: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub quadrature_tolerance: f64,
    #[serde(default = "default_half_width")]
    pub integration_half_width_sigmas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperatures: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_grid: Option<LogGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess: Option<EssConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws_per_sample: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeGrid>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn require<'a, T>(value: &'a Option<T>, key: &str, kind: ExperimentKind) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| bad(format!("missing key `{key}` (required by {})", kind.name())))
}

fn forbid<T>(value: &Option<T>, key: &str, kind: ExperimentKind) -> CliResult<()> {
    match value {
        Some(_) => Err(bad(format!("key `{key}` is not used by {}", kind.name()))),
        None => Ok(()),
    }
}

fn positive(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("`{name}` must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn temperature_list(&self) -> &[f64] {
        self.temperatures.as_deref().unwrap_or(&[])
    }

    /// Validates the config and fills in every default, so the result alone
    /// reproduces the run.
    pub fn resolve(mut self) -> CliResult<Self> {
        let kind = self.experiment;
        match (self.temperatures.take(), self.temperature_grid.take()) {
            (Some(_), Some(_)) => {
                return Err(bad("give either `temperatures` or `temperature_grid`, not both"))
            }
            (Some(list), None) => self.temperatures = Some(list),
            (None, Some(g)) => {
                let list = log_grid(g.lo, g.hi, g.count)
                    .map_err(|e| bad(format!("`temperature_grid`: {e}")))?;
                self.temperatures = Some(list);
            }
            (None, None) => {}
        }
        if let Some(k) = &self.kernel {
            k.validate().map_err(|e| bad(format!("`kernel`: {e}")))?;
        }
        if let Some(t) = &self.temperatures {
            validate_temperatures(t).map_err(|e| bad(format!("`temperatures`: {e}")))?;
        }

        match kind {
            ExperimentKind::RegressSweep => {
                require(&self.kernel, "kernel", kind)?;
                require(&self.temperatures, "temperatures", kind)?;
                let data = require(&self.data, "data", kind)?.clone();
                forbid(&self.ess, "ess", kind)?;
                forbid(&self.draws_per_sample, "draws_per_sample", kind)?;
                forbid(&self.probe, "probe", kind)?;
                let settings = match self.regression.take() {
                    Some(s) => s,
                    None => match &data {
                        DataSpec::RbfRegression { noise_std, .. } => RegressionSettings {
                            assumed_noise_std: vec![*noise_std],
                            replicates: 1,
                        },
                        _ => return Err(bad("missing key `regression` (no noise level to assume)")),
                    },
                };
                if settings.assumed_noise_std.is_empty() {
                    return Err(bad("`regression.assumed_noise_std` is empty"));
                }
                for &s in &settings.assumed_noise_std {
                    if !(s >= 0.0) || !s.is_finite() {
                        return Err(bad(format!("`regression.assumed_noise_std` entry {s} is negative")));
                    }
                }
                if settings.replicates == 0 {
                    return Err(bad("`regression.replicates` must be at least 1"));
                }
                match &data {
                    DataSpec::RbfRegression { .. } => {}
                    DataSpec::Files { .. } if settings.replicates == 1 => {}
                    DataSpec::Files { .. } => {
                        return Err(bad("`regression.replicates` must be 1 for file data"))
                    }
                    _ => return Err(bad("`data.source` must be rbf-regression or files")),
                }
                self.regression = Some(settings);
            }
            ExperimentKind::ClassifySweep => {
                require(&self.kernel, "kernel", kind)?;
                require(&self.temperatures, "temperatures", kind)?;
                let data = require(&self.data, "data", kind)?;
                if matches!(data, DataSpec::RbfRegression { .. }) {
                    return Err(bad("`data.source` rbf-regression has no class labels"));
                }
                forbid(&self.regression, "regression", kind)?;
                forbid(&self.probe, "probe", kind)?;
                let ess = self.ess.take().unwrap_or_default();
                ess.validate().map_err(|e| bad(format!("`ess`: {e}")))?;
                self.ess = Some(ess);
                let draws = self.draws_per_sample.unwrap_or(8);
                if draws == 0 {
                    return Err(bad("`draws_per_sample` must be at least 1"));
                }
                self.draws_per_sample = Some(draws);
            }
            ExperimentKind::Probe => {
                require(&self.temperatures, "temperatures", kind)?;
                let probe = require(&self.probe, "probe", kind)?;
                for key in ["kernel", "data", "regression", "ess", "draws_per_sample"] {
                    let present = match key {
                        "kernel" => self.kernel.is_some(),
                        "data" => self.data.is_some(),
                        "regression" => self.regression.is_some(),
                        "ess" => self.ess.is_some(),
                        _ => self.draws_per_sample.is_some(),
                    };
                    if present {
                        return Err(bad(format!("key `{key}` is not used by probe")));
                    }
                }
                if probe.latent_scales.is_empty() {
                    return Err(bad("`probe.latent_scales` is empty"));
                }
                for &c in &probe.latent_scales {
                    positive("probe.latent_scales", c)?;
                }
                positive("probe.quadrature_tolerance", probe.quadrature_tolerance)?;
                positive("probe.integration_half_width_sigmas", probe.integration_half_width_sigmas)?;
            }
            ExperimentKind::GenData => {
                require(&self.data, "data", kind)?;
                forbid(&self.temperatures, "temperatures", kind)?;
                forbid(&self.regression, "regression", kind)?;
                forbid(&self.ess, "ess", kind)?;
                forbid(&self.draws_per_sample, "draws_per_sample", kind)?;
                forbid(&self.probe, "probe", kind)?;
            }
        }
        if let Some(data) = &self.data {
            validate_data(data)?;
        }
        Ok(self)
    }
}

fn validate_data(data: &DataSpec) -> CliResult<()> {
    match data {
        DataSpec::RbfRegression {
            n_train,
            n_test,
            noise_std,
            kernel,
        } => {
            if *n_train == 0 || *n_test == 0 {
                return Err(bad("`data.n_train` and `data.n_test` must be positive"));
            }
            if !(*noise_std >= 0.0) || !noise_std.is_finite() {
                return Err(bad(format!("`data.noise_std` must be >= 0, got {noise_std}")));
            }
            if !kernel.is_rbf() {
                return Err(bad("`data.kernel` must be an rbf kernel"));
            }
            kernel.validate().map_err(|e| bad(format!("`data.kernel`: {e}")))
        }
        DataSpec::Clusters(clusters) => validate_clusters(clusters, "data"),
        DataSpec::Cifar10 {
            classes,
            n_train,
            n_test,
            fallback,
            ..
        } => {
            if *n_train == 0 || *n_test == 0 {
                return Err(bad("`data.n_train` and `data.n_test` must be positive"));
            }
            if let Some(c) = classes {
                if c.len() < 2 || c.iter().any(|&k| k > 9) {
                    return Err(bad(format!("`data.classes` must name at least two of 0..=9, got {c:?}")));
                }
            }
            match fallback {
                Some(f) => validate_clusters(f, "data.fallback"),
                None => Ok(()),
            }
        }
        DataSpec::Files { .. } => Ok(()),
    }
}

fn validate_clusters(c: &ClusterConfig, key: &str) -> CliResult<()> {
    if c.n_per_class == 0 || c.n_test_per_class == Some(0) {
        return Err(bad(format!("`{key}` needs at least one example per class")));
    }
    if c.class_count < 2 {
        return Err(bad(format!("`{key}.class_count` must be at least 2")));
    }
    if c.d == 0 || (c.d < 64 && c.class_count > 1usize << c.d) {
        return Err(bad(format!("`{key}.d` is too small for {} classes", c.class_count)));
    }
    if !c.separation.is_finite() || c.separation < 0.0 {
        return Err(bad(format!("`{key}.separation` must be >= 0")));
    }
    Ok(())
}
