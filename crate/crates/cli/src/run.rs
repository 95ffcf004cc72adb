//! Dispatches a resolved config and writes its output bundle.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use tempered_gp::classification::{classification_temperature_sweep, ClassificationSweepConfig};
use tempered_gp::data::{
    cifar_train_files, gen_cluster_classification, gen_rbf_regression, load_cifar10,
    normalize_split, read_columnar, write_columnar, LabeledDataset, Split,
};
use tempered_gp::probe::{relabel_ratio_curve, ProbeConfig};
use tempered_gp::regression::{
    average_sweeps, regression_temperature_sweep, RegressionModel, RegressionPosterior,
};
use tempered_gp::Error;

use crate::config::{DataSpec, ExperimentConfig, ExperimentKind};
use crate::error::{CliError, CliResult};

pub const RESULTS_FILE: &str = "results.csv";
pub const CONFIG_FILE: &str = "resolved_config.json";
pub const LOG_FILE: &str = "run.log";

pub const REGRESS_COLUMNS: [&str; 4] = ["temperature", "test_nll", "seed", "assumed_noise_std"];
pub const CLASSIFY_COLUMNS: [&str; 6] = [
    "temperature",
    "test_log_likelihood",
    "top1_accuracy",
    "n_train",
    "n_test",
    "seed",
];
pub const PROBE_COLUMNS: [&str; 4] = ["c", "T", "probability", "ratio"];

/// Files written by one run, relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
}

/// Shortest round-trip form, with exponents for very large or small values.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

struct Bundle {
    files: Vec<(String, Vec<u8>)>,
    log: String,
}

impl Bundle {
    fn new() -> Self {
        Self {
            files: Vec::new(),
            log: String::new(),
        }
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    fn log(&mut self, line: impl AsRef<str>) {
        self.log.push_str(line.as_ref());
        self.log.push('\n');
    }
}

/// Runs a config that has already been through [`ExperimentConfig::resolve`].
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<RunReport> {
    let start = Instant::now();
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_json())?;

    let mut bundle = Bundle::new();
    bundle.log(format!("experiment: {}", cfg.experiment.name()));
    bundle.log(format!("seed: {}", cfg.seed));
    bundle.log(format!("threads: {}", rayon::current_num_threads()));
    match cfg.experiment {
        ExperimentKind::RegressSweep => regress(cfg, &mut bundle)?,
        ExperimentKind::ClassifySweep => classify(cfg, &mut bundle)?,
        ExperimentKind::Probe => probe(cfg, &mut bundle)?,
        ExperimentKind::GenData => gen_data(cfg, &mut bundle)?,
    }
    let mut files = vec![CONFIG_FILE.to_string()];
    for (name, bytes) in &bundle.files {
        fs::write(dir.join(name), bytes)?;
        files.push(name.clone());
    }
    bundle.log(format!("wall_time_s: {:.3}", start.elapsed().as_secs_f64()));
    fs::write(dir.join(LOG_FILE), &bundle.log)?;
    files.push(LOG_FILE.to_string());
    Ok(RunReport {
        output_dir: dir,
        files,
    })
}

fn data_error(e: Error) -> CliError {
    match e {
        Error::FileNotFound(_) | Error::MalformedRecord(_) | Error::Io(_) => {
            CliError::Config(format!("`data`: {e}"))
        }
        other => CliError::Compute(other),
    }
}

fn read_file(path: &Path, split: Split) -> CliResult<LabeledDataset> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("`data`: {}: {e}", path.display())))?;
    read_columnar(BufReader::new(f), split, path.display().to_string()).map_err(data_error)
}

fn load_data(
    spec: &DataSpec,
    seed: u64,
    bundle: &mut Bundle,
) -> CliResult<(LabeledDataset, LabeledDataset)> {
    let pair = match spec {
        DataSpec::RbfRegression {
            n_train,
            n_test,
            noise_std,
            kernel,
        } => gen_rbf_regression(*n_train, *n_test, *noise_std, kernel, seed)?,
        DataSpec::Clusters(c) => gen_cluster_classification(c, seed)?,
        DataSpec::Cifar10 {
            dir,
            classes,
            n_train,
            n_test,
            normalization,
            fallback,
        } => match (cifar_train_files(dir), fallback) {
            (Err(Error::FileNotFound(_)), Some(fb)) => {
                bundle.log(format!(
                    "data: no CIFAR-10 batches under {}, using cluster fallback",
                    dir.display()
                ));
                gen_cluster_classification(fb, seed)?
            }
            _ => {
                let (train, test) =
                    load_cifar10(dir, classes.as_deref(), *n_train, *n_test, seed).map_err(data_error)?;
                bundle.log(format!("data: CIFAR-10 from {}", dir.display()));
                normalize_split(&train, &test, *normalization)?
            }
        },
        DataSpec::Files { train, test } => {
            (read_file(train, Split::Train)?, read_file(test, Split::Test)?)
        }
    };
    bundle.log(format!(
        "data: seed={seed} n_train={} n_test={} d={}",
        pair.0.len(),
        pair.1.len(),
        pair.0.dim()
    ));
    Ok(pair)
}

fn regress(cfg: &ExperimentConfig, bundle: &mut Bundle) -> CliResult<()> {
    let kernel = cfg.kernel.as_ref().expect("resolved");
    let settings = cfg.regression.as_ref().expect("resolved");
    let data = cfg.data.as_ref().expect("resolved");
    let temps = cfg.temperature_list();

    let mut sets = Vec::with_capacity(settings.replicates);
    for r in 0..settings.replicates as u64 {
        let seed = cfg.seed.wrapping_add(r);
        sets.push((seed, load_data(data, seed, bundle)?));
    }
    let jobs: Vec<(f64, usize)> = settings
        .assumed_noise_std
        .iter()
        .flat_map(|&s| (0..sets.len()).map(move |r| (s, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(noise_std, r)| {
            let (seed, (train, test)) = &sets[r];
            let model = RegressionModel {
                kernel: kernel.clone(),
                noise_std,
            };
            let jitter = RegressionPosterior::fit(&model, train)?.jitter_used();
            let sweep = regression_temperature_sweep(&model, train, test, temps, *seed)?;
            Ok((noise_std, jitter, sweep))
        })
        .collect::<tempered_gp::Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (noise_std, chunk) in settings
        .assumed_noise_std
        .iter()
        .zip(outcomes.chunks(sets.len()))
    {
        for (_, jitter, sweep) in chunk {
            bundle.log(format!(
                "assumed_noise_std={} seed={} jitter_used={:e}",
                fmt_num(*noise_std),
                sweep.records[0].seed,
                jitter
            ));
            for rec in &sweep.records {
                rows.push(vec![
                    fmt_num(rec.temperature),
                    fmt_num(rec.metric("test_nll")?),
                    rec.seed.to_string(),
                    fmt_num(*noise_std),
                ]);
            }
        }
        let sweeps: Vec<_> = chunk.iter().map(|(_, _, s)| s.clone()).collect();
        let mean = average_sweeps(&sweeps)?;
        summary.push(vec![
            fmt_num(*noise_std),
            fmt_num(mean.argmin_temperature()),
            fmt_num(mean.nll()[mean.argmin_index]),
            sweeps.len().to_string(),
        ]);
    }
    bundle.table(RESULTS_FILE, &REGRESS_COLUMNS, &rows)?;
    bundle.table(
        "summary.csv",
        &["assumed_noise_std", "argmin_temperature", "mean_test_nll", "replicates"],
        &summary,
    )
}

fn classify(cfg: &ExperimentConfig, bundle: &mut Bundle) -> CliResult<()> {
    let kernel = cfg.kernel.as_ref().expect("resolved");
    let (train, test) = load_data(cfg.data.as_ref().expect("resolved"), cfg.seed, bundle)?;
    let sweep_cfg = ClassificationSweepConfig {
        ess: cfg.ess.clone().expect("resolved"),
        draws_per_sample: cfg.draws_per_sample.expect("resolved"),
    };
    let records =
        classification_temperature_sweep(kernel, &train, &test, cfg.temperature_list(), &sweep_cfg, cfg.seed)?;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for rec in &records {
        rows.push(vec![
            fmt_num(rec.temperature),
            fmt_num(rec.metric("test_log_likelihood")?),
            fmt_num(rec.metric("top1_accuracy")?),
            train.len().to_string(),
            test.len().to_string(),
            rec.seed.to_string(),
        ]);
        errors.push(vec![
            fmt_num(rec.temperature),
            fmt_num(rec.metric("test_log_likelihood_se")?),
            fmt_num(rec.metric("top1_accuracy_se")?),
        ]);
        let mut line = format!("T={} jitter_used={:e}", fmt_num(rec.temperature), rec.metric("jitter_used")?);
        let _ = write!(
            line,
            " ess_mean_proposals={:.3} ll_se={:.3e} acc_se={:.3e}",
            rec.metric("mean_proposals")?,
            rec.metric("test_log_likelihood_se")?,
            rec.metric("top1_accuracy_se")?
        );
        bundle.log(line);
    }
    bundle.table(RESULTS_FILE, &CLASSIFY_COLUMNS, &rows)?;
    bundle.table(
        "mc_errors.csv",
        &["temperature", "test_log_likelihood_se", "top1_accuracy_se"],
        &errors,
    )
}

fn probe(cfg: &ExperimentConfig, bundle: &mut Bundle) -> CliResult<()> {
    let grid = cfg.probe.as_ref().expect("resolved");
    let defaults = ProbeConfig {
        quadrature_tolerance: grid.quadrature_tolerance,
        integration_half_width_sigmas: grid.integration_half_width_sigmas,
        ..ProbeConfig::new(1.0, 1.0)
    };
    let temps = cfg.temperature_list();
    let curves = grid
        .latent_scales
        .par_iter()
        .map(|&c| relabel_ratio_curve(&[c], temps, &defaults))
        .collect::<tempered_gp::Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = curves
        .iter()
        .flatten()
        .map(|r| {
            vec![
                fmt_num(r.latent_scale),
                fmt_num(r.temperature),
                fmt_num(r.probability),
                fmt_num(r.ratio),
            ]
        })
        .collect();
    bundle.log(format!(
        "quadrature: tolerance={:e} half_width_sigmas={} rows={}",
        grid.quadrature_tolerance,
        grid.integration_half_width_sigmas,
        rows.len()
    ));
    bundle.table(RESULTS_FILE, &PROBE_COLUMNS, &rows)
}

fn gen_data(cfg: &ExperimentConfig, bundle: &mut Bundle) -> CliResult<()> {
    let (train, test) = load_data(cfg.data.as_ref().expect("resolved"), cfg.seed, bundle)?;
    for (name, set) in [("train.csv", &train), ("test.csv", &test)] {
        let mut bytes = Vec::new();
        write_columnar(set, &mut bytes)?;
        bundle.files.push((name.to_string(), bytes));
    }
    Ok(())
}
