//! The precompute → train → evaluate → report stages.
//!
//! Output layout under `run.out`:
//!
//! ```text
//! manifest.json
//! cache/index.json, cache/<dataset>.cache
//! checkpoints/seed-<s>/{flat,grouped,grouped-member-<k>}.ckpt
//! logs/seed-<s>/<model>.csv
//! scores/seed-<s>/<method>.csv
//! eval_records.csv
//! summary.{csv,md}, per_dataset.{csv,md}
//! histograms/<method>.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use pepr_core::data::{
    self, AugmentSpec, Benchmark, CachedDataset, FeatureDataset, FeatureFormat, Split, IN_DISTRIBUTION_NAME,
};
use pepr_core::metrics::{self, EvalRecord, Histogram, LabeledScores};
use pepr_core::model::{classifier_member_seed, train_classifier, train_ensemble, HeadKind, LabeledFeatures};
use pepr_core::scoring::{KlmTemplates, Method, ModelSet, ScoreVector};
use pepr_core::{PeprModel, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};

/// Missing or inconsistent data or artifacts; maps to exit code 2.
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "data error: {}", self.0)
    }
}

impl std::error::Error for DataError {}

fn data_err(msg: impl Into<String>) -> anyhow::Error {
    DataError(msg.into()).into()
}

/// Paths of every artifact under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: cfg.run.out.clone(),
        }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }
    pub fn cache_index(&self) -> PathBuf {
        self.cache_dir().join("index.json")
    }
    pub fn checkpoint(&self, seed: u64, model: &str) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("seed-{seed}"))
            .join(format!("{model}.ckpt"))
    }
    pub fn training_log(&self, seed: u64, model: &str) -> PathBuf {
        self.root
            .join("logs")
            .join(format!("seed-{seed}"))
            .join(format!("{model}.csv"))
    }
    pub fn scores(&self, seed: u64, method: Method) -> PathBuf {
        self.root
            .join("scores")
            .join(format!("seed-{seed}"))
            .join(format!("{}.csv", method.slug()))
    }
    pub fn records(&self) -> PathBuf {
        self.root.join("eval_records.csv")
    }
    pub fn summary_csv(&self) -> PathBuf {
        self.root.join("summary.csv")
    }
    pub fn summary_md(&self) -> PathBuf {
        self.root.join("summary.md")
    }
    pub fn per_dataset_csv(&self) -> PathBuf {
        self.root.join("per_dataset.csv")
    }
    pub fn per_dataset_md(&self) -> PathBuf {
        self.root.join("per_dataset.md")
    }
    pub fn histogram(&self, method: Method) -> PathBuf {
        self.root.join("histograms").join(format!("{}.csv", method.slug()))
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.root)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

pub const FLAT_MODEL: &str = "flat";
pub const GROUPED_MODEL: &str = "grouped";

pub fn member_model(k: usize) -> String {
    format!("grouped-member-{k}")
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Resolved config, seeds, version, artifact checksums and stage timings.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub software_version: String,
    pub config_sha256: String,
    pub config: Option<RunConfig>,
    pub seeds: Vec<u64>,
    pub artifacts: BTreeMap<String, String>,
    pub timings_seconds: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn config_sha(cfg: &RunConfig) -> anyhow::Result<String> {
    Ok(data::bytes_sha256(serde_json::to_string(cfg)?.as_bytes()))
}

/// Writes the manifest with the current config before a stage produces results.
fn begin_stage(cfg: &RunConfig, layout: &Layout) -> anyhow::Result<Manifest> {
    let mut m = Manifest::load(&layout.manifest()).unwrap_or_default();
    m.software_version = env!("CARGO_PKG_VERSION").to_string();
    m.config_sha256 = config_sha(cfg)?;
    m.config = Some(cfg.clone());
    m.seeds = cfg.run.seeds.clone();
    write_file(&layout.manifest(), serde_json::to_string_pretty(&m)?)?;
    Ok(m)
}

fn finish_stage(
    mut m: Manifest,
    layout: &Layout,
    stage: &str,
    started: Instant,
    artifacts: &[PathBuf],
) -> anyhow::Result<()> {
    for p in artifacts {
        m.artifacts.insert(layout.relative(p), data::file_sha256(p)?);
    }
    m.timings_seconds
        .insert(stage.to_string(), started.elapsed().as_secs_f64());
    write_file(&layout.manifest(), serde_json::to_string_pretty(&m)?)
}

/// Models a method set needs per seed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Requirements {
    pub flat: bool,
    pub grouped: bool,
    pub regressors: usize,
    /// Grouped classifiers including the main grouped model.
    pub grouped_classifiers: usize,
    pub templates: bool,
}

pub fn requirements(methods: &[Method]) -> Requirements {
    let mut r = Requirements::default();
    for m in methods {
        match m.head() {
            HeadKind::Flat => r.flat = true,
            HeadKind::Grouped => {
                r.grouped = true;
                r.grouped_classifiers = r.grouped_classifiers.max(m.classifiers_needed());
            }
        }
        r.regressors = r.regressors.max(m.regressors_needed());
        r.templates |= m.base == pepr_core::scoring::BaseMethod::Klm;
    }
    r
}

fn concat(name: &str, parts: Vec<FeatureDataset>) -> anyhow::Result<FeatureDataset> {
    let dim = parts[0].dim();
    let mut data = Vec::new();
    let mut out = FeatureDataset {
        name: name.into(),
        features: pepr_core::Tensor2::zeros(0, dim),
        labels: Vec::new(),
        splits: Vec::new(),
        ids: Vec::new(),
        provenance: parts[0].provenance.clone(),
    };
    for p in parts {
        if p.dim() != dim {
            return Err(data_err(format!("feature width {} differs from {dim}", p.dim())));
        }
        data.extend_from_slice(p.features.as_slice());
        out.labels.extend(p.labels);
        out.splits.extend(p.splits);
        out.ids.extend(p.ids);
    }
    out.features = pepr_core::Tensor2::from_vec(out.labels.len(), dim, data)?;
    Ok(out)
}

/// Generates or loads the configured datasets.
pub fn load_benchmark(cfg: &RunConfig) -> anyhow::Result<Benchmark> {
    match cfg.data.source {
        DataSource::Synthetic => Ok(data::gen_synthetic(&cfg.data.synthetic)?),
        DataSource::Files => {
            let files = cfg
                .data
                .files
                .as_ref()
                .ok_or_else(|| anyhow!(crate::config::ConfigError("missing [data.files]".into())))?;
            let mut next_id = 0u64;
            let mut load = |path: &Path, name: &str, split: Split| -> anyhow::Result<FeatureDataset> {
                let file = data::load_feature_file(path, FeatureFormat::from_path(path))
                    .with_context(|| format!("loading feature file {}", path.display()))?;
                let ds = file.into_dataset(name, split, next_id, path)?;
                next_id += ds.len() as u64;
                Ok(ds)
            };
            let train = load(&files.train, IN_DISTRIBUTION_NAME, Split::Train)?;
            let val = load(&files.val, IN_DISTRIBUTION_NAME, Split::Val)?;
            let test = load(&files.test_in, IN_DISTRIBUTION_NAME, Split::TestIn)?;
            if test.splits.contains(&Split::TestOod) {
                return Err(data_err(format!(
                    "{}: OOD rows belong in an OOD file",
                    files.test_in.display()
                )));
            }
            let in_dist = concat(IN_DISTRIBUTION_NAME, vec![train, val, test])?;
            in_dist.validate()?;
            let mut ood = Vec::new();
            for o in &files.ood {
                let ds = load(&o.path, &o.name, Split::TestOod)?;
                if ds.splits.iter().any(|&s| s != Split::TestOod) {
                    return Err(data_err(format!(
                        "{}: OOD files may only hold label -1",
                        o.path.display()
                    )));
                }
                if ds.dim() != in_dist.dim() {
                    return Err(data_err(format!("{}: feature width differs", o.path.display())));
                }
                ood.push(ds);
            }
            Ok(Benchmark { in_dist, ood })
        }
    }
}

fn augment_spec(cfg: &RunConfig, bench: &Benchmark) -> AugmentSpec {
    let sigma = cfg.data.augment_sigma.unwrap_or_else(|| match cfg.data.source {
        DataSource::Synthetic => cfg.data.synthetic.augment_sigma(),
        DataSource::Files => {
            let train = bench.in_dist.split(Split::Train);
            let n = train.rows() as f64;
            let sums = train.column_sums();
            let mean_sd = (0..train.cols())
                .map(|j| {
                    let mu = sums[j] / n;
                    (train.iter_rows().map(|r| (r[j] - mu).powi(2)).sum::<f64>() / n).sqrt()
                })
                .sum::<f64>()
                / train.cols() as f64;
            data::DEFAULT_AUGMENT_RATIO * mean_sd
        }
    });
    AugmentSpec {
        per_example: cfg.data.augmentations,
        sigma,
        seed: cfg.data.augment_seed,
    }
}

/// Which data config the cache was built from, and each file's checksum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheIndex {
    pub data_sha256: String,
    /// Dataset names, in-distribution first.
    pub datasets: Vec<String>,
    pub files: BTreeMap<String, String>,
}

fn data_sha(cfg: &RunConfig) -> anyhow::Result<String> {
    Ok(data::bytes_sha256(serde_json::to_string(&cfg.data)?.as_bytes()))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecomputeOutcome {
    pub written: Vec<String>,
    pub reused: Vec<String>,
}

/// Builds cache files whose checksum is missing or stale; a no-op when all match.
pub fn precompute(cfg: &RunConfig) -> anyhow::Result<PrecomputeOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let layout = Layout::new(cfg);
    let manifest = begin_stage(cfg, &layout)?;
    let sha = data_sha(cfg)?;
    let previous: Option<CacheIndex> = fs::read_to_string(layout.cache_index())
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .filter(|idx: &CacheIndex| idx.data_sha256 == sha);

    let bench = load_benchmark(cfg)?;
    let aug = augment_spec(cfg, &bench);
    fs::create_dir_all(layout.cache_dir())?;
    let mut outcome = PrecomputeOutcome::default();
    let mut index = CacheIndex {
        data_sha256: sha,
        datasets: Vec::new(),
        files: BTreeMap::new(),
    };
    let mut paths = Vec::new();
    for ds in bench.datasets() {
        let path = data::cache_path(&layout.cache_dir(), &ds.name);
        let recorded = previous.as_ref().and_then(|p| p.files.get(&ds.name));
        let current = data::file_sha256(&path).ok();
        let checksum = match (recorded, current) {
            (Some(r), Some(c)) if *r == c => {
                outcome.reused.push(ds.name.clone());
                c
            }
            (r, c) => {
                if r.is_some() && c.is_some() {
                    log::warn!("{}: checksum mismatch, rebuilding", path.display());
                }
                data::precompute_cache(ds, &aug, layout.cache_dir())?;
                outcome.written.push(ds.name.clone());
                data::file_sha256(&path)?
            }
        };
        index.datasets.push(ds.name.clone());
        index.files.insert(ds.name.clone(), checksum);
        paths.push(path);
    }
    write_file(&layout.cache_index(), serde_json::to_string_pretty(&index)?)?;
    log::info!(
        "precompute: {} written, {} unchanged",
        outcome.written.len(),
        outcome.reused.len()
    );
    finish_stage(manifest, &layout, "precompute", started, &paths)?;
    Ok(outcome)
}

/// Loads the cache index and checks it matches the current data config.
pub fn cache_index(cfg: &RunConfig) -> anyhow::Result<CacheIndex> {
    let layout = Layout::new(cfg);
    let text = fs::read_to_string(layout.cache_index()).map_err(|_| {
        data_err(format!(
            "no feature cache in {}; run `pepr precompute`",
            layout.cache_dir().display()
        ))
    })?;
    let idx: CacheIndex = serde_json::from_str(&text)?;
    if idx.data_sha256 != data_sha(cfg)? {
        return Err(data_err(
            "feature cache was built from a different [data] config; run `pepr precompute`",
        ));
    }
    Ok(idx)
}

/// Loads one cached dataset, verifying both the file and payload checksums.
pub fn load_cached(cfg: &RunConfig, idx: &CacheIndex, name: &str) -> anyhow::Result<CachedDataset> {
    let path = data::cache_path(&Layout::new(cfg).cache_dir(), name);
    let expected = idx
        .files
        .get(name)
        .ok_or_else(|| data_err(format!("dataset {name} missing from cache index")))?;
    let actual = data::file_sha256(&path).map_err(|_| data_err(format!("missing cache file {}", path.display())))?;
    if &actual != expected {
        return Err(anyhow!(pepr_core::Error::Checksum(path))
            .context("feature cache is corrupted; rerun `pepr precompute` to rebuild it"));
    }
    Ok(data::load_cache(&path)?)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOutcome {
    pub checkpoints: Vec<PathBuf>,
    pub diverged: Vec<(u64, String)>,
}

fn train_one(
    layout: &Layout,
    seed: u64,
    name: &str,
    train: &LabeledFeatures,
    val: &LabeledFeatures,
    cfg: &TrainConfig,
    regressors: usize,
) -> pepr_core::Result<(PathBuf, PathBuf)> {
    let (model, log) = if regressors > 0 {
        train_ensemble(train, Some(val), cfg, regressors)?
    } else {
        train_classifier(train, Some(val), cfg)?
    };
    let ckpt = layout.checkpoint(seed, name);
    let log_path = layout.training_log(seed, name);
    for p in [&ckpt, &log_path] {
        fs::create_dir_all(p.parent().expect("artifact paths have parents"))?;
    }
    model.save(&ckpt, Some(cfg))?;
    fs::write(&log_path, log.to_csv())?;
    log::info!(
        "seed {seed}: {name} trained, validation accuracy {:?}",
        log.epochs.last().and_then(|e| e.validation_accuracy)
    );
    Ok((ckpt, log_path))
}

fn train_seed(
    cfg: &RunConfig,
    req: Requirements,
    layout: &Layout,
    seed: u64,
    train: &LabeledFeatures,
    val: &LabeledFeatures,
) -> pepr_core::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut base = cfg.train.clone();
    base.seed = seed;
    if req.flat {
        let tc = TrainConfig {
            head: HeadKind::Flat,
            ..base.clone()
        };
        let (c, l) = train_one(layout, seed, FLAT_MODEL, train, val, &tc, 0)?;
        out.extend([c, l]);
    }
    if req.grouped {
        let tc = TrainConfig {
            head: HeadKind::Grouped,
            ..base.clone()
        };
        let (c, l) = train_one(layout, seed, GROUPED_MODEL, train, val, &tc, req.regressors)?;
        out.extend([c, l]);
        for k in 1..req.grouped_classifiers {
            let member = TrainConfig {
                seed: classifier_member_seed(seed, k),
                ..tc.clone()
            };
            let (c, l) = train_one(layout, seed, &member_model(k), train, val, &member, 0)?;
            out.extend([c, l]);
        }
    }
    Ok(out)
}

/// Trains every model the configured methods need, one seed per task.
/// A diverged seed is reported and the others continue.
pub fn train(cfg: &RunConfig) -> anyhow::Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let layout = Layout::new(cfg);
    let manifest = begin_stage(cfg, &layout)?;
    let req = requirements(&cfg.methods()?);
    let idx = cache_index(cfg)?;
    let cached = load_cached(cfg, &idx, IN_DISTRIBUTION_NAME)?;
    let train = cached.labeled(Split::Train)?;
    let val = cached.labeled(Split::Val)?;
    if val.is_empty() {
        return Err(data_err("validation split is empty"));
    }

    let results: Vec<(u64, pepr_core::Result<Vec<PathBuf>>)> = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| (seed, train_seed(cfg, req, &layout, seed, &train, &val)))
        .collect();

    let mut outcome = TrainOutcome::default();
    let mut first_failure = None;
    for (seed, r) in results {
        match r {
            Ok(paths) => outcome.checkpoints.extend(paths),
            Err(e @ pepr_core::Error::Diverged { .. }) | Err(e @ pepr_core::Error::Numeric(_)) => {
                log::error!("seed {seed}: {e}");
                outcome.diverged.push((seed, e.to_string()));
                first_failure.get_or_insert(e);
            }
            Err(e) => return Err(anyhow!(e).context(format!("training seed {seed}"))),
        }
    }
    finish_stage(manifest, &layout, "train", started, &outcome.checkpoints)?;
    if let Some(e) = first_failure {
        let seeds: Vec<String> = outcome.diverged.iter().map(|(s, _)| s.to_string()).collect();
        return Err(anyhow!(e).context(format!("training diverged for seed(s) {}", seeds.join(", "))));
    }
    Ok(outcome)
}

fn load_model(path: &Path) -> anyhow::Result<PeprModel> {
    if !path.exists() {
        return Err(data_err(format!(
            "missing checkpoint {}; run `pepr train`",
            path.display()
        )));
    }
    Ok(PeprModel::load(path)
        .with_context(|| format!("loading {}", path.display()))?
        .0)
}

struct SeedModels {
    flat: Option<PeprModel>,
    grouped: Option<PeprModel>,
    members: Vec<PeprModel>,
    templates: Option<KlmTemplates>,
}

fn load_seed_models(
    layout: &Layout,
    req: Requirements,
    seed: u64,
    methods: &[Method],
    train: &LabeledFeatures,
) -> anyhow::Result<SeedModels> {
    let flat = req
        .flat
        .then(|| load_model(&layout.checkpoint(seed, FLAT_MODEL)))
        .transpose()?;
    let grouped = req
        .grouped
        .then(|| load_model(&layout.checkpoint(seed, GROUPED_MODEL)))
        .transpose()?;
    if let Some(g) = &grouped {
        if g.regressors.len() < req.regressors {
            let m = methods
                .iter()
                .find(|m| m.regressors_needed() > g.regressors.len())
                .expect("some method");
            return Err(data_err(format!(
                "{} has {} regressor(s) but {m} needs {}; rerun `pepr train`",
                layout.checkpoint(seed, GROUPED_MODEL).display(),
                g.regressors.len(),
                m.regressors_needed()
            )));
        }
    }
    let members = (1..req.grouped_classifiers)
        .map(|k| load_model(&layout.checkpoint(seed, &member_model(k))))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let templates = match (&flat, req.templates) {
        (Some(f), true) => {
            let probs = f.embed_and_classify(&train.features)?.probs;
            Some(KlmTemplates::fit(&probs, &train.labels)?)
        }
        _ => None,
    };
    Ok(SeedModels {
        flat,
        grouped,
        members,
        templates,
    })
}

/// One score-dump row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub example_id: u64,
    pub dataset: String,
    pub method: Method,
    pub score: f64,
    pub is_in_distribution: u8,
}

fn write_scores(path: &Path, rows: &[ScoreRow]) -> anyhow::Result<()> {
    fs::create_dir_all(path.parent().expect("score paths have parents"))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> anyhow::Result<Vec<ScoreRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_seed(
    cfg: &RunConfig,
    layout: &Layout,
    methods: &[Method],
    req: Requirements,
    seed: u64,
    train: &LabeledFeatures,
    test_in: &CachedDataset,
    oods: &[CachedDataset],
) -> anyhow::Result<(Vec<EvalRecord>, Vec<PathBuf>)> {
    let models = load_seed_models(layout, req, seed, methods, train)?;
    let set = ModelSet {
        flat: models.flat.as_ref(),
        grouped: models.grouped.as_ref(),
        grouped_members: &models.members,
        templates: models.templates.as_ref(),
        psi: cfg.scoring.psi,
    };
    let in_rows = test_in.split(Split::TestIn);
    let in_ids: Vec<u64> = test_in
        .split_entries(Split::TestIn)
        .iter()
        .map(|e| e.example_id)
        .collect();
    let in_scores = set.score(&in_rows, methods)?;
    let ood_scores: Vec<Vec<ScoreVector>> = oods
        .iter()
        .map(|o| set.score(&o.features, methods))
        .collect::<pepr_core::Result<_>>()?;

    let mut records = Vec::new();
    let mut paths = Vec::new();
    for (k, &method) in methods.iter().enumerate() {
        let mut rows: Vec<ScoreRow> = in_ids
            .iter()
            .zip(&in_scores[k].values)
            .map(|(&id, &s)| ScoreRow {
                example_id: id,
                dataset: IN_DISTRIBUTION_NAME.into(),
                method,
                score: s,
                is_in_distribution: 1,
            })
            .collect();
        for (o, scores) in oods.iter().zip(&ood_scores) {
            let ls = LabeledScores::new(in_scores[k].values.clone(), scores[k].values.clone())?;
            records.push(EvalRecord::compute(method, o.name.clone(), seed, &ls)?);
            rows.extend(o.entries.iter().zip(&scores[k].values).map(|(e, &s)| ScoreRow {
                example_id: e.example_id,
                dataset: o.name.clone(),
                method,
                score: s,
                is_in_distribution: 0,
            }));
        }
        let path = layout.scores(seed, method);
        write_scores(&path, &rows)?;
        paths.push(path);
    }
    Ok((records, paths))
}

/// Scores every (method, dataset, seed) cell and writes score dumps and records.
pub fn evaluate(cfg: &RunConfig) -> anyhow::Result<Vec<EvalRecord>> {
    cfg.validate()?;
    let started = Instant::now();
    let layout = Layout::new(cfg);
    let manifest = begin_stage(cfg, &layout)?;
    let methods = cfg.methods()?;
    let req = requirements(&methods);
    let idx = cache_index(cfg)?;
    let in_cache = load_cached(cfg, &idx, IN_DISTRIBUTION_NAME)?;
    let train = in_cache.labeled(Split::Train)?;
    let oods: Vec<CachedDataset> = idx
        .datasets
        .iter()
        .filter(|n| n.as_str() != IN_DISTRIBUTION_NAME)
        .map(|n| load_cached(cfg, &idx, n))
        .collect::<anyhow::Result<_>>()?;
    if oods.is_empty() {
        return Err(data_err("no OOD datasets in the cache"));
    }

    let per_seed: Vec<anyhow::Result<(Vec<EvalRecord>, Vec<PathBuf>)>> = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| {
            evaluate_seed(cfg, &layout, &methods, req, seed, &train, &in_cache, &oods)
                .with_context(|| format!("evaluating seed {seed}"))
        })
        .collect();
    let mut records = Vec::new();
    let mut paths = Vec::new();
    for r in per_seed {
        let (rec, p) = r?;
        records.extend(rec);
        paths.extend(p);
    }
    let rank: BTreeMap<Method, usize> = methods.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    records.sort_by(|a, b| (rank[&a.method], &a.dataset, a.seed).cmp(&(rank[&b.method], &b.dataset, b.seed)));
    let mut buf = Vec::new();
    metrics::write_records(&records, &mut buf)?;
    write_file(&layout.records(), buf)?;
    paths.push(layout.records());
    log::info!("evaluate: {} records", records.len());
    finish_stage(manifest, &layout, "evaluate", started, &paths)?;
    Ok(records)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportOutcome {
    pub summary: Vec<metrics::SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// Builds summary and per-dataset tables and score histograms from the
/// record CSV and score dumps.
pub fn report(cfg: &RunConfig) -> anyhow::Result<ReportOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let layout = Layout::new(cfg);
    let manifest = begin_stage(cfg, &layout)?;
    let file = fs::File::open(layout.records())
        .map_err(|_| data_err(format!("no {}; run `pepr evaluate`", layout.records().display())))?;
    let records = metrics::read_records(file)?;
    let summary = metrics::summarize(&records).map_err(|e| data_err(e.to_string()))?;
    let per_dataset = metrics::per_dataset(&records).map_err(|e| data_err(e.to_string()))?;

    let mut files = Vec::new();
    let mut emit = |path: PathBuf, text: String| -> anyhow::Result<()> {
        write_file(&path, text)?;
        files.push(path);
        Ok(())
    };
    emit(layout.summary_csv(), metrics::summary_csv(&summary)?)?;
    emit(layout.per_dataset_csv(), metrics::per_dataset_csv(&per_dataset)?)?;
    let header = format!("Run configuration sha256 `{}`\n\n", config_sha(cfg)?);
    emit(
        layout.summary_md(),
        header.clone() + &metrics::summary_markdown(&summary),
    )?;
    emit(
        layout.per_dataset_md(),
        header + &metrics::per_dataset_markdown(&per_dataset),
    )?;

    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.dedup();
    methods.sort();
    methods.dedup();
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    for method in methods {
        let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
        for &seed in &seeds {
            for row in read_scores(&layout.scores(seed, method))? {
                match curves.iter_mut().find(|c| c.0 == row.dataset) {
                    Some(c) => c.1.push(row.score),
                    None => curves.push((row.dataset, vec![row.score])),
                }
            }
        }
        let h = Histogram::build(&curves, cfg.report.histogram_bins)?;
        emit(layout.histogram(method), h.to_csv()?)?;
    }
    finish_stage(manifest, &layout, "report", started, &files)?;
    Ok(ReportOutcome { summary, files })
}

/// All four stages.
pub fn run(cfg: &RunConfig) -> anyhow::Result<ReportOutcome> {
    precompute(cfg)?;
    train(cfg)?;
    evaluate(cfg)?;
    report(cfg)
}

/// Process exit code for an error: 1 config, 2 data, 3 divergence.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<crate::config::ConfigError>() || cause.is::<toml::de::Error>() {
            return 1;
        }
        if cause.is::<DataError>() || cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<pepr_core::Error>() {
            return match e {
                pepr_core::Error::Config(_) => 1,
                pepr_core::Error::Diverged { .. } | pepr_core::Error::Numeric(_) => 3,
                _ => 2,
            };
        }
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn methods(list: &[&str]) -> Vec<Method> {
        list.iter().map(|s| s.parse().unwrap()).collect()
    }

    #[test]
    fn requirements_follow_methods() {
        let r = requirements(&methods(&["MSP"]));
        assert_eq!(
            r,
            Requirements {
                flat: true,
                grouped: false,
                regressors: 0,
                grouped_classifiers: 0,
                templates: false
            }
        );
        let r = requirements(&methods(&["CPEPR-10"]));
        assert!(!r.flat && r.grouped);
        assert_eq!((r.regressors, r.grouped_classifiers), (10, 1));
        let r = requirements(&methods(&["KLM", "MOS-4", "PEPR"]));
        assert!(r.flat && r.templates);
        assert_eq!((r.regressors, r.grouped_classifiers), (1, 4));
        let r = requirements(&methods(&["EPOW"]));
        assert_eq!(r.regressors, 0);
    }

    #[test]
    fn exit_codes() {
        let cfg: anyhow::Error = crate::config::ConfigError("x".into()).into();
        assert_eq!(exit_code(&cfg), 1);
        assert_eq!(exit_code(&data_err("x")), 2);
        let div = anyhow!(pepr_core::Error::Diverged {
            epoch: 1,
            step: 2,
            detail: "nan".into()
        })
        .context("seed 3");
        assert_eq!(exit_code(&div), 3);
        assert_eq!(exit_code(&anyhow!(pepr_core::Error::Config("x".into()))), 1);
        assert_eq!(exit_code(&anyhow!(pepr_core::Error::Checksum("p".into()))), 2);
    }

    #[test]
    fn layout_paths() {
        let l = Layout { root: "out".into() };
        assert_eq!(
            l.scores(3, "CPEPR-10".parse().unwrap()),
            Path::new("out/scores/seed-3/cpepr-10.csv")
        );
        assert_eq!(
            l.checkpoint(0, &member_model(2)),
            Path::new("out/checkpoints/seed-0/grouped-member-2.ckpt")
        );
        assert_eq!(l.relative(&l.records()), "eval_records.csv");
    }
}
