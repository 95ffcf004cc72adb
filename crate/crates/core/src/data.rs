//! Datasets: synthetic generators, the CIFAR-10 binary batch reader, input
//! standardization and a plain columnar text format.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram_symmetric, KernelSpec};
use crate::linalg::{cholesky, mvn_sample, JitterPolicy};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Vec<f64>),
    Classes { labels: Vec<usize>, class_count: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Inputs (one example per row) with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: DMatrix<f64>,
    pub targets: Targets,
    pub split: Split,
    pub provenance: String,
}

impl LabeledDataset {
    pub fn new(
        inputs: DMatrix<f64>,
        targets: Targets,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        if inputs.nrows() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.nrows(),
                right: targets.len(),
            });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        match &targets {
            Targets::Real(v) if v.iter().any(|y| !y.is_finite()) => {
                return Err(Error::NonFiniteInput)
            }
            Targets::Classes {
                labels,
                class_count,
            } => {
                if let Some(&label) = labels.iter().find(|&&l| l >= *class_count) {
                    return Err(Error::LabelOutOfRange {
                        label,
                        class_count: *class_count,
                    });
                }
            }
            _ => {}
        }
        Ok(Self {
            inputs,
            targets,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn real_targets(&self) -> Result<DVector<f64>> {
        match &self.targets {
            Targets::Real(v) => Ok(DVector::from_column_slice(v)),
            Targets::Classes { .. } => Err(Error::InvalidArgument(
                "expected real-valued targets, found class labels".into(),
            )),
        }
    }

    pub fn class_labels(&self) -> Result<(&[usize], usize)> {
        match &self.targets {
            Targets::Classes {
                labels,
                class_count,
            } => Ok((labels, *class_count)),
            Targets::Real(_) => Err(Error::InvalidArgument(
                "expected class labels, found real-valued targets".into(),
            )),
        }
    }
}

/// Scalar inputs `x ~ N(0, 1)` labelled by one joint prior draw `f*` plus
/// Gaussian noise. The first `n_train` points form the training split.
pub fn gen_rbf_regression(
    n_train: usize,
    n_test: usize,
    noise_std: f64,
    kernel: &KernelSpec,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !kernel.is_rbf() {
        return Err(Error::InvalidArgument("regression generator expects an RBF kernel".into()));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidArgument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    if n_train == 0 || n_test == 0 {
        return Err(Error::EmptyInput);
    }
    let n = n_train + n_test;
    let stream = RngStream::new(seed, 0);
    let mut input_rng = stream.rng();
    let xs = DMatrix::from_fn(n, 1, |_, _| input_rng.sample::<f64, _>(StandardNormal));
    let factor = cholesky(&gram_symmetric(kernel, &xs)?, &JitterPolicy::default())?;
    let f_star = mvn_sample(&DVector::zeros(n), &factor, &mut stream.with_index(1).rng())?;
    let mut noise_rng = stream.with_index(2).rng();
    let ys: Vec<f64> = f_star
        .iter()
        .map(|f| f + noise_std * noise_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let provenance = format!("gen_rbf_regression(noise_std={noise_std}, seed={seed})");
    let train = LabeledDataset::new(
        xs.rows(0, n_train).into_owned(),
        Targets::Real(ys[..n_train].to_vec()),
        Split::Train,
        provenance.clone(),
    )?;
    let test = LabeledDataset::new(
        xs.rows(n_train, n_test).into_owned(),
        Targets::Real(ys[n_train..].to_vec()),
        Split::Test,
        provenance,
    )?;
    Ok((train, test))
}

/// Settings for [`gen_cluster_classification`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub n_per_class: usize,
    /// Test examples per class; defaults to `n_per_class`.
    #[serde(default)]
    pub n_test_per_class: Option<usize>,
    pub class_count: usize,
    pub d: usize,
    pub separation: f64,
}

/// Isotropic unit-variance Gaussian clusters centred on hypercube vertices
/// `±separation/2` (class `k` uses the bits of `k` as signs), so adjacent
/// classes sit `separation` apart. Rows cycle through the classes.
pub fn gen_cluster_classification(
    cfg: &ClusterConfig,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if cfg.class_count < 2 {
        return Err(Error::InvalidArgument("class_count must be at least 2".into()));
    }
    if cfg.d == 0 || cfg.d < usize::BITS as usize && cfg.class_count > 1usize << cfg.d {
        return Err(Error::InvalidArgument(format!(
            "{} classes need at least {} input dimensions",
            cfg.class_count,
            (cfg.class_count as f64).log2().ceil()
        )));
    }
    if !(cfg.separation >= 0.0) || !cfg.separation.is_finite() {
        return Err(Error::InvalidArgument("separation must be >= 0".into()));
    }
    let n_test_per_class = cfg.n_test_per_class.unwrap_or(cfg.n_per_class);
    if cfg.n_per_class == 0 || n_test_per_class == 0 {
        return Err(Error::EmptyInput);
    }
    let half = 0.5 * cfg.separation;
    let center = |k: usize, j: usize| {
        if j < usize::BITS as usize && (k >> j) & 1 == 1 {
            half
        } else {
            -half
        }
    };
    let provenance = format!(
        "gen_cluster_classification(classes={}, d={}, separation={}, seed={seed})",
        cfg.class_count, cfg.d, cfg.separation
    );
    let build = |per_class: usize, index: u64, split: Split| {
        let mut rng = RngStream::new(seed, index).rng();
        let n = per_class * cfg.class_count;
        let labels: Vec<usize> = (0..n).map(|i| i % cfg.class_count).collect();
        let mut inputs = DMatrix::zeros(n, cfg.d);
        for i in 0..n {
            for j in 0..cfg.d {
                inputs[(i, j)] = center(labels[i], j) + rng.sample::<f64, _>(StandardNormal);
            }
        }
        LabeledDataset::new(
            inputs,
            Targets::Classes {
                labels,
                class_count: cfg.class_count,
            },
            split,
            provenance.clone(),
        )
    };
    Ok((
        build(cfg.n_per_class, 0, Split::Train)?,
        build(n_test_per_class, 1, Split::Test)?,
    ))
}

pub const CIFAR_IMAGE_BYTES: usize = 3072;
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_IMAGE_BYTES;

/// One CIFAR-10 record: a label byte and 3072 channel-major pixel bytes
/// (1024 red, 1024 green, 1024 blue, each row-major 32×32).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub label: u8,
    pub pixels: Vec<u8>,
}

pub fn parse_cifar_records(bytes: &[u8]) -> Result<Vec<CifarRecord>> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::MalformedRecord(format!(
            "length {} is not a multiple of {CIFAR_RECORD_BYTES}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(CIFAR_RECORD_BYTES)
        .enumerate()
        .map(|(i, chunk)| {
            if chunk[0] > 9 {
                return Err(Error::MalformedRecord(format!(
                    "record {i} has label byte {}",
                    chunk[0]
                )));
            }
            Ok(CifarRecord {
                label: chunk[0],
                pixels: chunk[1..].to_vec(),
            })
        })
        .collect()
}

pub fn write_cifar_records(records: &[CifarRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

fn read_cifar_file(path: &Path) -> Result<Vec<CifarRecord>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.display().to_string()),
        _ => Error::from(e),
    })?;
    parse_cifar_records(&bytes)
}

/// Training batch files present in `dir`, in batch order.
pub fn cifar_train_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let files: Vec<PathBuf> = (1..=5)
        .map(|k| dir.join(format!("data_batch_{k}.bin")))
        .filter(|p| p.is_file())
        .collect();
    if files.is_empty() {
        return Err(Error::FileNotFound(dir.join("data_batch_1.bin").display().to_string()));
    }
    Ok(files)
}

fn cifar_subset(
    records: Vec<CifarRecord>,
    keep_classes: Option<&[u8]>,
    n: usize,
    rng: &mut impl Rng,
    split: Split,
    provenance: String,
) -> Result<LabeledDataset> {
    let kept: Vec<(usize, CifarRecord)> = records
        .into_iter()
        .filter_map(|r| match keep_classes {
            Some(keep) => keep.iter().position(|&c| c == r.label).map(|pos| (pos, r)),
            None => Some((r.label as usize, r)),
        })
        .collect();
    if kept.len() < n {
        return Err(Error::InvalidArgument(format!(
            "requested {n} {split:?} records but only {} match",
            kept.len()
        )));
    }
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.shuffle(rng);
    let mut chosen = order[..n].to_vec();
    chosen.sort_unstable();
    let class_count = keep_classes.map_or(10, <[u8]>::len);
    let mut inputs = DMatrix::zeros(n, CIFAR_IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for (row, &idx) in chosen.iter().enumerate() {
        let (label, record) = &kept[idx];
        for (j, &p) in record.pixels.iter().enumerate() {
            inputs[(row, j)] = p as f64 / 255.0;
        }
        labels.push(*label);
    }
    LabeledDataset::new(
        inputs,
        Targets::Classes {
            labels,
            class_count,
        },
        split,
        provenance,
    )
}

/// Reads the standard binary batches from `dir` and draws `n_train` training
/// and `n_test` test records. With `keep_classes`, other labels are dropped
/// and the kept ones are renumbered in subset order. Pixels map to `[0, 1]`.
pub fn load_cifar10(
    dir: &Path,
    keep_classes: Option<&[u8]>,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if let Some(keep) = keep_classes {
        if keep.is_empty() || keep.iter().any(|&c| c > 9) {
            return Err(Error::InvalidArgument(format!("bad class subset {keep:?}")));
        }
    }
    let test_path = dir.join("test_batch.bin");
    let mut train_records = Vec::new();
    for path in cifar_train_files(dir)? {
        train_records.extend(read_cifar_file(&path)?);
    }
    let test_records = read_cifar_file(&test_path)?;
    let provenance = format!("cifar10({}, classes={keep_classes:?}, seed={seed})", dir.display());
    let stream = RngStream::new(seed, 0);
    let train = cifar_subset(
        train_records,
        keep_classes,
        n_train,
        &mut stream.rng(),
        Split::Train,
        provenance.clone(),
    )?;
    let test = cifar_subset(
        test_records,
        keep_classes,
        n_test,
        &mut stream.with_index(1).rng(),
        Split::Test,
        provenance,
    )?;
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationScheme {
    None,
    GlobalStandardize,
}

/// Scalar mean and standard deviation over every input entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputStats {
    pub mean: f64,
    pub std: f64,
}

impl InputStats {
    pub fn from_dataset(data: &LabeledDataset) -> Result<Self> {
        let n = data.inputs.len() as f64;
        let mean = data.inputs.sum() / n;
        let var = data.inputs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::ZeroVariance);
        }
        Ok(Self { mean, std })
    }
}

/// Applies `scheme`. Training splits may compute their own statistics; test
/// splits must be given the training statistics.
pub fn normalize_inputs(
    data: &LabeledDataset,
    scheme: NormalizationScheme,
    train_stats: Option<&InputStats>,
) -> Result<LabeledDataset> {
    match scheme {
        NormalizationScheme::None => Ok(data.clone()),
        NormalizationScheme::GlobalStandardize => {
            let stats = match (train_stats, data.split) {
                (Some(s), _) => *s,
                (None, Split::Train) => InputStats::from_dataset(data)?,
                (None, Split::Test) => {
                    return Err(Error::InvalidArgument(
                        "test split needs training statistics".into(),
                    ))
                }
            };
            let mut out = data.clone();
            out.inputs.apply(|v| *v = (*v - stats.mean) / stats.std);
            Ok(out)
        }
    }
}

/// Normalizes both splits with statistics taken from `train`.
pub fn normalize_split(
    train: &LabeledDataset,
    test: &LabeledDataset,
    scheme: NormalizationScheme,
) -> Result<(LabeledDataset, LabeledDataset)> {
    match scheme {
        NormalizationScheme::None => Ok((train.clone(), test.clone())),
        NormalizationScheme::GlobalStandardize => {
            let stats = InputStats::from_dataset(train)?;
            Ok((
                normalize_inputs(train, scheme, Some(&stats))?,
                normalize_inputs(test, scheme, Some(&stats))?,
            ))
        }
    }
}

/// Writes the columnar text format: a header `x0,…,x{d-1},<target>` where the
/// last column is `target` (regression) or `label[C]` (C classes), then one
/// comma-separated row per example.
pub fn write_columnar<W: Write>(data: &LabeledDataset, mut out: W) -> Result<()> {
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push(match &data.targets {
        Targets::Real(_) => "target".to_string(),
        Targets::Classes { class_count, .. } => format!("label[{class_count}]"),
    });
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.inputs.row(i).iter().map(|v| v.to_string()).collect();
        row.push(match &data.targets {
            Targets::Real(v) => v[i].to_string(),
            Targets::Classes { labels, .. } => labels[i].to_string(),
        });
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_columnar<R: BufRead>(
    input: R,
    split: Split,
    provenance: impl Into<String>,
) -> Result<LabeledDataset> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedRecord("missing header".into()))??;
    let columns: Vec<&str> = header.split(',').collect();
    let d = columns.len().saturating_sub(1);
    if d == 0 {
        return Err(Error::MalformedRecord("header has no input columns".into()));
    }
    let last = columns[d];
    let class_count = if last == "target" {
        None
    } else if let Some(c) = last.strip_prefix("label[").and_then(|s| s.strip_suffix(']')) {
        Some(c.parse::<usize>().map_err(|_| Error::MalformedRecord(format!("bad header {last}")))?)
    } else {
        return Err(Error::MalformedRecord(format!("unknown target column {last}")));
    };
    let mut values = Vec::new();
    let mut targets = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::MalformedRecord(format!(
                "row {} has {} fields, expected {}",
                lineno + 1,
                fields.len(),
                d + 1
            )));
        }
        for f in &fields {
            values.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::MalformedRecord(format!("row {}: bad value {f}", lineno + 1)))?,
            );
        }
        targets.push(values.pop().unwrap());
    }
    let n = targets.len();
    let inputs = DMatrix::from_row_slice(n, d, &values);
    let targets = match class_count {
        None => Targets::Real(targets),
        Some(class_count) => Targets::Classes {
            labels: targets
                .iter()
                .map(|&t| {
                    if t >= 0.0 && t.fract() == 0.0 {
                        Ok(t as usize)
                    } else {
                        Err(Error::MalformedRecord(format!("bad label {t}")))
                    }
                })
                .collect::<Result<_>>()?,
            class_count,
        },
    };
    LabeledDataset::new(inputs, targets, split, provenance)
}
