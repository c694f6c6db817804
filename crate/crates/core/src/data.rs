//! Feature-space datasets: the seeded synthetic benchmark, CSV and binary
//! feature files, and the on-disk feature cache.
//!
//! Labels are `i64`: `≥ 0` for in-distribution classes, [`OOD_LABEL`] for
//! OOD rows. OOD rows never leave this module through
//! [`FeatureDataset::labeled`] or [`CachedDataset::labeled`], the only
//! routes into training and template fitting.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::LabeledFeatures;
use crate::nn::checkpoint::Container;
use crate::seed::{derive_seed, stream_rng, streams};
use crate::tensor::Tensor2;

pub const OOD_LABEL: i64 = -1;
pub const FEATURE_MAGIC: &[u8; 8] = b"PEPRFEAT";
pub const FEATURE_VERSION: u32 = 1;
pub const CACHE_EXTENSION: &str = "cache";
/// Default jitter σ relative to the within-cluster σ.
pub const DEFAULT_AUGMENT_RATIO: f64 = 0.05;
pub const IN_DISTRIBUTION_NAME: &str = "in-distribution";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    TestIn,
    TestOod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodMode {
    /// Samples around freshly drawn cluster means.
    HeldOutClusters,
    /// In-distribution samples translated along one random direction.
    MeanShift,
    /// Zero-mean isotropic Gaussian with the in-distribution per-feature variance.
    IsotropicNoise,
}

impl OodMode {
    pub const ALL: [OodMode; 3] = [OodMode::HeldOutClusters, OodMode::MeanShift, OodMode::IsotropicNoise];

    pub fn name(self) -> &'static str {
        match self {
            OodMode::HeldOutClusters => "held-out-clusters",
            OodMode::MeanShift => "mean-shift",
            OodMode::IsotropicNoise => "isotropic-noise",
        }
    }

    fn stream(self) -> u64 {
        match self {
            OodMode::HeldOutClusters => 0,
            OodMode::MeanShift => 1,
            OodMode::IsotropicNoise => 2,
        }
    }
}

/// Gaussian-cluster benchmark. Class means are `N(0, mean_scale²·I)`;
/// samples add `N(0, within_sigma²·I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub classes: usize,
    pub mean_scale: f64,
    pub within_sigma: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub ood_modes: Vec<OodMode>,
    pub ood_count: usize,
    /// Cluster count for [`OodMode::HeldOutClusters`].
    pub ood_clusters: usize,
    /// Mean-shift length relative to `mean_scale·√dim`.
    pub shift_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 64,
            classes: 100,
            mean_scale: 1.0,
            within_sigma: 1.0,
            train_per_class: 200,
            val_per_class: 50,
            test_per_class: 50,
            ood_modes: OodMode::ALL.to_vec(),
            ood_count: 2000,
            ood_clusters: 20,
            shift_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn samples_per_class(&self) -> usize {
        self.train_per_class + self.val_per_class + self.test_per_class
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.classes < 2 {
            return Err(Error::config("synthetic data needs dim ≥ 2 and classes ≥ 2"));
        }
        if self.train_per_class == 0 || self.val_per_class == 0 {
            return Err(Error::config(format!(
                "{} samples per class: at least one training and one validation sample needed",
                self.samples_per_class()
            )));
        }
        if !(self.mean_scale > 0.0) || !(self.within_sigma >= 0.0) || !(self.shift_fraction >= 0.0) {
            return Err(Error::config(
                "mean_scale must be > 0; within_sigma and shift_fraction ≥ 0",
            ));
        }
        if !self.ood_modes.is_empty() && self.ood_count == 0 {
            return Err(Error::config("ood_count must be positive"));
        }
        if self.ood_modes.contains(&OodMode::HeldOutClusters) && self.ood_clusters == 0 {
            return Err(Error::config("ood_clusters must be positive"));
        }
        Ok(())
    }

    pub fn augment_sigma(&self) -> f64 {
        DEFAULT_AUGMENT_RATIO * self.within_sigma
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic(SyntheticSpec),
    File(PathBuf),
}

/// Feature rows with labels, split tags and example ids.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    pub name: String,
    pub features: Tensor2,
    pub labels: Vec<i64>,
    pub splits: Vec<Split>,
    pub ids: Vec<u64>,
    pub provenance: Provenance,
}

impl FeatureDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Rows of one split.
    pub fn split(&self, split: Split) -> Tensor2 {
        self.features.select_rows(&self.indices(split))
    }

    pub fn split_ids(&self, split: Split) -> Vec<u64> {
        self.indices(split).into_iter().map(|i| self.ids[i]).collect()
    }

    /// Labeled rows of an in-distribution split; fails on any OOD row.
    pub fn labeled(&self, split: Split) -> Result<LabeledFeatures> {
        let idx = self.indices(split);
        to_labeled(
            &self.features.select_rows(&idx),
            idx.iter().map(|&i| self.labels[i]),
            split,
        )
    }

    /// Row counts, split/label consistency and class coverage of the training split.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.features.rows() != n || self.splits.len() != n || self.ids.len() != n {
            return Err(Error::invalid(format!(
                "dataset {}: column lengths disagree",
                self.name
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for i in 0..n {
            if !seen.insert(self.ids[i]) {
                return Err(Error::invalid(format!(
                    "dataset {}: duplicate example id {}",
                    self.name, self.ids[i]
                )));
            }
            let ood = self.labels[i] == OOD_LABEL;
            match (self.splits[i], ood) {
                (Split::Train | Split::Val, true) => {
                    return Err(Error::invalid(format!(
                        "dataset {}: OOD example {} tagged {:?}",
                        self.name, self.ids[i], self.splits[i]
                    )))
                }
                (Split::TestOod, false) | (Split::TestIn, true) => {
                    return Err(Error::invalid(format!(
                        "dataset {}: example {} has label {} but split {:?}",
                        self.name, self.ids[i], self.labels[i], self.splits[i]
                    )))
                }
                _ if self.labels[i] < OOD_LABEL => {
                    return Err(Error::invalid(format!(
                        "dataset {}: label {}",
                        self.name, self.labels[i]
                    )))
                }
                _ => {}
            }
        }
        let classes = self.labels.iter().copied().max().unwrap_or(-1) + 1;
        let mut in_train = vec![false; classes.max(0) as usize];
        for i in self.indices(Split::Train) {
            in_train[self.labels[i] as usize] = true;
        }
        if let Some(k) = in_train.iter().position(|&b| !b) {
            return Err(Error::invalid(format!(
                "dataset {}: class {k} absent from training split",
                self.name
            )));
        }
        Ok(())
    }
}

fn to_labeled(features: &Tensor2, labels: impl Iterator<Item = i64>, split: Split) -> Result<LabeledFeatures> {
    let labels: Vec<usize> = labels
        .map(|l| {
            usize::try_from(l).map_err(|_| {
                Error::invalid(format!(
                    "OOD row (label {l}) in {split:?} data; OOD rows never reach training"
                ))
            })
        })
        .collect::<Result<_>>()?;
    LabeledFeatures::new(features.clone(), labels)
}

/// In-distribution data plus one dataset per OOD variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub in_dist: FeatureDataset,
    pub ood: Vec<FeatureDataset>,
}

impl Benchmark {
    pub fn num_classes(&self) -> usize {
        (self.in_dist.labels.iter().copied().max().unwrap_or(-1) + 1) as usize
    }

    /// Datasets in cache order: in-distribution first.
    pub fn datasets(&self) -> impl Iterator<Item = &FeatureDataset> {
        std::iter::once(&self.in_dist).chain(&self.ood)
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn around(center: &[f64], rng: &mut ChaCha8Rng, sigma: f64) -> Vec<f64> {
    center
        .iter()
        .map(|&c| c + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generates the benchmark; a pure function of `spec`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Benchmark> {
    spec.validate()?;
    let d = spec.dim;
    let mut mean_rng = stream_rng(spec.seed, streams::SYNTH_MEANS);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| gaussian_vec(&mut mean_rng, d, spec.mean_scale))
        .collect();

    let mut rng = stream_rng(spec.seed, streams::SYNTH_SAMPLES);
    let per_class = spec.samples_per_class();
    let total = per_class * spec.classes;
    let mut data = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    for split in [Split::Train, Split::Val, Split::TestIn] {
        let count = match split {
            Split::Train => spec.train_per_class,
            Split::Val => spec.val_per_class,
            _ => spec.test_per_class,
        };
        for (k, mu) in means.iter().enumerate() {
            for _ in 0..count {
                data.extend(around(mu, &mut rng, spec.within_sigma));
                labels.push(k as i64);
                splits.push(split);
            }
        }
    }
    let in_dist = FeatureDataset {
        name: IN_DISTRIBUTION_NAME.into(),
        features: Tensor2::from_vec(total, d, data)?,
        labels,
        splits,
        ids: (0..total as u64).collect(),
        provenance: Provenance::Synthetic(spec.clone()),
    };

    let mut next_id = total as u64;
    let mut ood = Vec::with_capacity(spec.ood_modes.len());
    for &mode in &spec.ood_modes {
        let mut rng = stream_rng(derive_seed(spec.seed, streams::SYNTH_OOD), mode.stream());
        let n = spec.ood_count;
        let mut data = Vec::with_capacity(n * d);
        match mode {
            OodMode::HeldOutClusters => {
                let centers: Vec<Vec<f64>> = (0..spec.ood_clusters)
                    .map(|_| gaussian_vec(&mut rng, d, spec.mean_scale))
                    .collect();
                for i in 0..n {
                    data.extend(around(&centers[i % centers.len()], &mut rng, spec.within_sigma));
                }
            }
            OodMode::MeanShift => {
                let dir = gaussian_vec(&mut rng, d, 1.0);
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let len = spec.shift_fraction * spec.mean_scale * (d as f64).sqrt();
                let shift: Vec<f64> = dir.iter().map(|v| v / norm * len).collect();
                for _ in 0..n {
                    let k = rng.gen_range(0..spec.classes);
                    let x = around(&means[k], &mut rng, spec.within_sigma);
                    data.extend(x.iter().zip(&shift).map(|(a, b)| a + b));
                }
            }
            OodMode::IsotropicNoise => {
                let sigma = (spec.mean_scale.powi(2) + spec.within_sigma.powi(2)).sqrt();
                for _ in 0..n {
                    data.extend(gaussian_vec(&mut rng, d, sigma));
                }
            }
        }
        ood.push(FeatureDataset {
            name: mode.name().into(),
            features: Tensor2::from_vec(n, d, data)?,
            labels: vec![OOD_LABEL; n],
            splits: vec![Split::TestOod; n],
            ids: (next_id..next_id + n as u64).collect(),
            provenance: Provenance::Synthetic(spec.clone()),
        });
        next_id += n as u64;
    }
    Ok(Benchmark { in_dist, ood })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureFormat {
    Csv,
    Binary,
}

impl FeatureFormat {
    /// `.csv` is CSV; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

/// Labels and features as stored in a feature file.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub labels: Vec<i64>,
    pub features: Tensor2,
}

impl FeatureFile {
    /// Tags rows for `split`: label −1 becomes [`Split::TestOod`] in test
    /// files and is rejected in training or validation files.
    pub fn into_dataset(self, name: &str, split: Split, first_id: u64, path: &Path) -> Result<FeatureDataset> {
        let splits = self
            .labels
            .iter()
            .map(|&l| match (split, l == OOD_LABEL) {
                (Split::Train | Split::Val, true) => Err(Error::invalid(format!(
                    "{}: OOD row in a {split:?} file",
                    path.display()
                ))),
                (_, true) => Ok(Split::TestOod),
                (Split::TestOod, false) => Ok(Split::TestIn),
                (s, false) => Ok(s),
            })
            .collect::<Result<Vec<_>>>()?;
        let n = self.labels.len() as u64;
        Ok(FeatureDataset {
            name: name.into(),
            features: self.features,
            labels: self.labels,
            splits,
            ids: (first_id..first_id + n).collect(),
            provenance: Provenance::File(path.to_path_buf()),
        })
    }
}

pub fn load_feature_file(path: impl AsRef<Path>, format: FeatureFormat) -> Result<FeatureFile> {
    let path = path.as_ref();
    match format {
        FeatureFormat::Csv => read_csv_features(path, BufReader::new(File::open(path)?)),
        FeatureFormat::Binary => read_binary_features(path, BufReader::new(File::open(path)?)),
    }
}

pub fn write_feature_file(path: impl AsRef<Path>, format: FeatureFormat, file: &FeatureFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    match format {
        FeatureFormat::Csv => write_csv_features(&mut w, file)?,
        FeatureFormat::Binary => write_binary_features(&mut w, file)?,
    }
    w.flush()?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Header row, then `label,f1,...,fd` per row.
pub fn read_csv_features(path: &Path, r: impl Read) -> Result<FeatureFile> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header_len = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.len();
    if header_len < 2 {
        return Err(parse_err(
            path,
            1,
            "header needs a label column and at least one feature column",
        ));
    }
    let dim = header_len - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let label_text = rec.get(0).unwrap_or("").trim();
        let label: i64 = label_text
            .parse()
            .map_err(|_| parse_err(path, line, format!("label '{label_text}' is not an integer")))?;
        if label < OOD_LABEL {
            return Err(parse_err(path, line, format!("label {label} below -1")));
        }
        labels.push(label);
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("feature {} '{field}' is not a number", j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("feature {} is not finite", j + 1)));
            }
            data.push(v);
        }
    }
    if labels.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    Ok(FeatureFile {
        features: Tensor2::from_vec(labels.len(), dim, data)?,
        labels,
    })
}

pub fn write_csv_features(w: impl Write, file: &FeatureFile) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["label".to_string()];
    header.extend((1..=file.features.cols()).map(|j| format!("f{j}")));
    let io = |e: csv::Error| Error::Format(e.to_string());
    out.write_record(&header).map_err(io)?;
    for (row, label) in file.features.iter_rows().zip(&file.labels) {
        let mut rec = vec![label.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&rec).map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// `magic, u32 version, u64 rows, u64 dim`, then per row an `i32` label and
/// `dim` `f32` features, all little-endian.
pub fn read_binary_features(path: &Path, mut r: impl Read) -> Result<FeatureFile> {
    let fmt = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| fmt("empty or truncated file"))?;
    if &magic != FEATURE_MAGIC {
        return Err(fmt("not a feature file (bad magic)"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(|_| fmt("truncated header"))?;
    let version = u32::from_le_bytes(b4);
    if version != FEATURE_VERSION {
        return Err(fmt(&format!("unsupported version {version}")));
    }
    r.read_exact(&mut b8).map_err(|_| fmt("truncated header"))?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8).map_err(|_| fmt("truncated header"))?;
    let dim = u64::from_le_bytes(b8) as usize;
    if rows == 0 || dim == 0 {
        return Err(fmt("no data rows"));
    }
    let mut labels = Vec::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * dim);
    for i in 0..rows {
        r.read_exact(&mut b4)
            .map_err(|_| fmt(&format!("truncated at row {i}")))?;
        labels.push(i32::from_le_bytes(b4) as i64);
        for _ in 0..dim {
            r.read_exact(&mut b4)
                .map_err(|_| fmt(&format!("truncated at row {i}")))?;
            data.push(f32::from_le_bytes(b4) as f64);
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(fmt("trailing bytes"));
    }
    Ok(FeatureFile {
        features: Tensor2::from_vec(rows, dim, data)?,
        labels,
    })
}

/// Features are narrowed to `f32`.
pub fn write_binary_features(mut w: impl Write, file: &FeatureFile) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(file.features.rows() as u64).to_le_bytes())?;
    w.write_all(&(file.features.cols() as u64).to_le_bytes())?;
    for (row, &label) in file.features.iter_rows().zip(&file.labels) {
        let label = i32::try_from(label).map_err(|_| Error::invalid(format!("label {label} exceeds i32")))?;
        w.write_all(&label.to_le_bytes())?;
        for &v in row {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Augmentation settings for training rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    /// Jittered variants stored per training example.
    pub per_example: usize,
    pub sigma: f64,
    pub seed: u64,
}

/// Index entry of one cached row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub example_id: u64,
    pub augmentation: u32,
    pub label: i64,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    kind: String,
    dataset: String,
    dim: usize,
    augment: AugmentSpec,
    payload_sha256: String,
    index: Vec<CacheEntry>,
}

const CACHE_KIND: &str = "feature-cache";

/// One dataset's cached rows. Immutable once loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedDataset {
    pub name: String,
    pub augment: AugmentSpec,
    pub entries: Vec<CacheEntry>,
    pub features: Tensor2,
}

impl CachedDataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].split == split)
            .collect()
    }

    pub fn split(&self, split: Split) -> Tensor2 {
        self.features.select_rows(&self.indices(split))
    }

    pub fn split_entries(&self, split: Split) -> Vec<CacheEntry> {
        self.entries.iter().copied().filter(|e| e.split == split).collect()
    }

    /// Labeled rows of an in-distribution split; fails on any OOD row.
    pub fn labeled(&self, split: Split) -> Result<LabeledFeatures> {
        let idx = self.indices(split);
        to_labeled(
            &self.features.select_rows(&idx),
            idx.iter().map(|&i| self.entries[i].label),
            split,
        )
    }
}

/// Cache file path of `dataset` inside `dir`.
pub fn cache_path(dir: &Path, dataset: &str) -> PathBuf {
    dir.join(format!("{dataset}.{CACHE_EXTENSION}"))
}

fn payload_digest(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// SHA-256 of `bytes`, hex encoded.
pub fn bytes_sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let mut h = Sha256::new();
    let mut f = BufReader::new(File::open(path)?);
    std::io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

/// Builds the cached rows: `k` jittered variants per training row, other
/// splits copied unchanged.
pub fn build_cache(ds: &FeatureDataset, aug: &AugmentSpec) -> Result<CachedDataset> {
    ds.validate()?;
    if aug.per_example == 0 || !(aug.sigma >= 0.0) {
        return Err(Error::config("augmentation needs per_example ≥ 1 and sigma ≥ 0"));
    }
    let stream = ds
        .name
        .bytes()
        .fold(streams::AUGMENT, |acc, b| acc.wrapping_mul(31).wrapping_add(b as u64));
    let mut rng = stream_rng(aug.seed, stream);
    let d = ds.dim();
    let mut entries = Vec::new();
    let mut data = Vec::new();
    for i in 0..ds.len() {
        let row = ds.features.row(i);
        let entry = |a: u32| CacheEntry {
            example_id: ds.ids[i],
            augmentation: a,
            label: ds.labels[i],
            split: ds.splits[i],
        };
        if ds.splits[i] == Split::Train {
            for a in 0..aug.per_example {
                entries.push(entry(a as u32));
                if aug.sigma == 0.0 {
                    data.extend_from_slice(row);
                } else {
                    data.extend(around(row, &mut rng, aug.sigma));
                }
            }
        } else {
            entries.push(entry(0));
            data.extend_from_slice(row);
        }
    }
    Ok(CachedDataset {
        name: ds.name.clone(),
        augment: *aug,
        features: Tensor2::from_vec(entries.len(), d, data)?,
        entries,
    })
}

/// Writes the cache file of `ds` into `dir` and returns its path.
pub fn precompute_cache(ds: &FeatureDataset, aug: &AugmentSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let cached = build_cache(ds, aug)?;
    let path = cache_path(dir.as_ref(), &ds.name);
    write_cache(&cached, &path)?;
    Ok(path)
}

pub fn write_cache(cached: &CachedDataset, path: &Path) -> Result<()> {
    let meta = CacheMeta {
        kind: CACHE_KIND.into(),
        dataset: cached.name.clone(),
        dim: cached.features.cols(),
        augment: cached.augment,
        payload_sha256: payload_digest(cached.features.as_slice()),
        index: cached.entries.clone(),
    };
    let container = Container {
        meta: serde_json::to_value(meta)?,
        tensors: vec![("features".into(), cached.features.as_slice().to_vec())],
    };
    // Write then rename so readers never observe a partial file.
    let tmp = path.with_extension("partial");
    container.save(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a cache file, verifying its payload checksum.
pub fn load_cache(path: impl AsRef<Path>) -> Result<CachedDataset> {
    let path = path.as_ref();
    let container = Container::load(path).map_err(|e| match e {
        Error::Io(_) => e,
        _ => Error::Checksum(path.to_path_buf()),
    })?;
    let meta: CacheMeta = serde_json::from_value(container.meta)?;
    if meta.kind != CACHE_KIND {
        return Err(Error::Format(format!("{}: not a feature cache", path.display())));
    }
    let values = container
        .tensors
        .into_iter()
        .find(|(n, _)| n == "features")
        .map(|(_, v)| v)
        .ok_or_else(|| Error::Format(format!("{}: no feature tensor", path.display())))?;
    if payload_digest(&values) != meta.payload_sha256 {
        return Err(Error::Checksum(path.to_path_buf()));
    }
    let features = Tensor2::from_vec(meta.index.len(), meta.dim, values)?;
    Ok(CachedDataset {
        name: meta.dataset,
        augment: meta.augment,
        entries: meta.index,
        features,
    })
}
