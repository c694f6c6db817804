//! Embedder, classifier heads and regressors, and their joint training.
//!
//! ```text
//! x ──► embedder ──► z ──► head ──► logits ──► ŷ
//!                    │                          │ (detached)
//!                    │ (detached)               ▼
//!                    └────────── target ◄── regressor(ŷ) = ẑ
//! ```
//!
//! The classifier (embedder + head) learns from the classification loss
//! only. Regressors see detached copies of `ŷ` and `z`, so nothing they do
//! reaches the classifier's parameters.

mod groups;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use groups::{GroupScheme, PROB_FLOOR};
pub use train::{
    anchor_only_steps, train_classifier, train_ensemble, train_pepr, EpochLog, LabeledFeatures, TrainingLog,
};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{Container, NetworkHeader};
use crate::nn::{softmax_cross_entropy, softmax_rows, AdamConfig, LayerSpec, Network};
use crate::seed::{derive_seed, streams};
use crate::tensor::Tensor2;

pub const EMBEDDER_HIDDEN: usize = 512;
pub const EMBEDDING_DIM: usize = 256;
pub const REGRESSOR_HIDDEN: [usize; 2] = [512, 256];
pub const EMBEDDER_DROPOUT: f64 = 0.1;
pub const REGRESSOR_LEAKY_SLOPE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadVariant {
    Flat { classes: usize },
    Grouped(GroupScheme),
}

impl HeadVariant {
    pub fn num_classes(&self) -> usize {
        match self {
            HeadVariant::Flat { classes } => *classes,
            HeadVariant::Grouped(s) => s.num_classes(),
        }
    }

    /// Width of the logits and of `ŷ`: `C` for flat, `Σ(|c_g|+1)` for grouped.
    pub fn width(&self) -> usize {
        match self {
            HeadVariant::Flat { classes } => *classes,
            HeadVariant::Grouped(s) => s.logit_width(),
        }
    }

    pub fn is_grouped(&self) -> bool {
        matches!(self, HeadVariant::Grouped(_))
    }

    pub fn scheme(&self) -> Option<&GroupScheme> {
        match self {
            HeadVariant::Grouped(s) => Some(s),
            HeadVariant::Flat { .. } => None,
        }
    }

    /// `ŷ` from logits.
    pub fn probabilities(&self, logits: &Tensor2) -> Result<Tensor2> {
        match self {
            HeadVariant::Flat { .. } => Ok(softmax_rows(logits)),
            HeadVariant::Grouped(s) => s.grouped_softmax(logits),
        }
    }

    pub fn loss(&self, logits: &Tensor2, targets: &[usize]) -> Result<(f64, Tensor2)> {
        match self {
            HeadVariant::Flat { .. } => softmax_cross_entropy(logits, targets),
            HeadVariant::Grouped(s) => s.grouped_cross_entropy(logits, targets),
        }
    }

    pub fn predict_class(&self, probs_row: &[f64]) -> usize {
        match self {
            HeadVariant::Flat { .. } => argmax(probs_row),
            HeadVariant::Grouped(s) => s.predict_class(probs_row),
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

/// `round(width * factor)`, at least 1.
pub fn scaled_width(width: usize, factor: f64) -> usize {
    ((width as f64 * factor).round() as usize).max(1)
}

/// Three dense+ELU blocks, each followed by batch-norm; dropout after the first two.
pub fn embedder_specs(input_dim: usize, width_factor: f64) -> Vec<LayerSpec> {
    let h = scaled_width(EMBEDDER_HIDDEN, width_factor);
    let n = scaled_width(EMBEDDING_DIM, width_factor);
    vec![
        LayerSpec::dense(input_dim, h),
        LayerSpec::Elu,
        LayerSpec::batch_norm(h),
        LayerSpec::Dropout { rate: EMBEDDER_DROPOUT },
        LayerSpec::dense(h, h),
        LayerSpec::Elu,
        LayerSpec::batch_norm(h),
        LayerSpec::Dropout { rate: EMBEDDER_DROPOUT },
        LayerSpec::dense(h, n),
        LayerSpec::Elu,
        LayerSpec::batch_norm(n),
    ]
}

/// Two tanh blocks, a linear projection to the embedding width, then leaky-ReLU.
pub fn regressor_specs(input_dim: usize, embedding_dim: usize, width_factor: f64) -> Vec<LayerSpec> {
    let h1 = scaled_width(REGRESSOR_HIDDEN[0], width_factor);
    let h2 = scaled_width(REGRESSOR_HIDDEN[1], width_factor);
    vec![
        LayerSpec::dense(input_dim, h1),
        LayerSpec::Tanh,
        LayerSpec::dense(h1, h2),
        LayerSpec::Tanh,
        LayerSpec::dense(h2, embedding_dim),
        LayerSpec::LeakyRelu {
            slope: REGRESSOR_LEAKY_SLOPE,
        },
    ]
}

/// Seed of the `index`-th regressor of a run.
pub fn regressor_seed(run_seed: u64, index: usize) -> u64 {
    derive_seed(run_seed, streams::REGRESSOR_BASE + index as u64)
}

/// Seed of the `index`-th independently trained classifier of a run (index 0 is the run seed).
pub fn classifier_member_seed(run_seed: u64, index: usize) -> u64 {
    if index == 0 {
        run_seed
    } else {
        derive_seed(run_seed, streams::CLASSIFIER_MEMBER_BASE + index as u64)
    }
}

pub fn build_regressor(input_dim: usize, embedding_dim: usize, width_factor: f64, seed: u64) -> Result<Network> {
    let mut r = Network::new(input_dim, regressor_specs(input_dim, embedding_dim, width_factor), seed)?;
    r.attach_anchors();
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Flat,
    Grouped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub anchor_gamma: f64,
    pub seed: u64,
    pub head: HeadKind,
    /// Group count for the grouped head; `None` picks about eight classes per group.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    pub width_factor: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            steps_per_epoch: 1000,
            batch_size: 512,
            step_size: 0.0003,
            anchor_gamma: 0.03,
            seed: 0,
            head: HeadKind::Grouped,
            groups: None,
            width_factor: 1.0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// 10 epochs of 100 steps at batch 128.
    pub fn desk() -> Self {
        Self {
            steps_per_epoch: 100,
            batch_size: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::config("epochs and steps per epoch must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch size must be at least 2 for batch-norm"));
        }
        if !(self.width_factor > 0.0) || !self.width_factor.is_finite() {
            return Err(Error::config(format!(
                "width factor {} must be positive",
                self.width_factor
            )));
        }
        if !(self.step_size > 0.0) || !(self.anchor_gamma >= 0.0) {
            return Err(Error::config(
                "step size must be positive and anchor gamma non-negative",
            ));
        }
        Ok(())
    }

    pub fn head_variant(&self, classes: usize) -> Result<HeadVariant> {
        Ok(match self.head {
            HeadKind::Flat => HeadVariant::Flat { classes },
            HeadKind::Grouped => HeadVariant::Grouped(match self.groups {
                Some(g) => GroupScheme::even_split(classes, g)?,
                None => GroupScheme::default_for(classes)?,
            }),
        })
    }
}

/// A classifier (embedder + head) and zero or more anchored regressors.
#[derive(Clone, Debug)]
pub struct PeprModel {
    pub embedder: Network,
    pub head: Network,
    pub variant: HeadVariant,
    pub regressors: Vec<Network>,
    pub width_factor: f64,
    pub seed: u64,
}

/// Eval-mode outputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Classified {
    pub embedding: Tensor2,
    pub logits: Tensor2,
    pub probs: Tensor2,
}

impl PeprModel {
    pub fn build(
        input_dim: usize,
        variant: HeadVariant,
        width_factor: f64,
        seed: u64,
        regressors: usize,
    ) -> Result<Self> {
        if !(width_factor > 0.0) {
            return Err(Error::config(format!("width factor {width_factor} must be positive")));
        }
        if variant.num_classes() < 2 {
            return Err(Error::config("need at least two classes"));
        }
        let embedder = Network::new(
            input_dim,
            embedder_specs(input_dim, width_factor),
            derive_seed(seed, streams::EMBEDDER),
        )?;
        let n = embedder.output_dim();
        let head = Network::new(
            n,
            vec![LayerSpec::dense(n, variant.width())],
            derive_seed(seed, streams::HEAD),
        )?;
        let regressors = (0..regressors)
            .map(|j| build_regressor(variant.width(), n, width_factor, regressor_seed(seed, j)))
            .collect::<Result<_>>()?;
        Ok(Self {
            embedder,
            head,
            variant,
            regressors,
            width_factor,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.embedder.input_dim()
    }

    /// Embedding width `n`.
    pub fn embedding_dim(&self) -> usize {
        self.embedder.output_dim()
    }

    /// Eval-mode embedding, logits and `ŷ`.
    pub fn embed_and_classify(&self, x: &Tensor2) -> Result<Classified> {
        let embedding = self.embedder.predict(x)?;
        let logits = self.head.predict(&embedding)?;
        let probs = self.variant.probabilities(&logits)?;
        Ok(Classified {
            embedding,
            logits,
            probs,
        })
    }

    /// Fraction of rows whose predicted class equals the label.
    pub fn accuracy(&self, data: &LabeledFeatures) -> Result<f64> {
        if data.labels.is_empty() {
            return Err(Error::invalid("accuracy over an empty set"));
        }
        let mut correct = 0usize;
        for (start, end) in chunks(data.labels.len(), 4096) {
            let idx: Vec<usize> = (start..end).collect();
            let out = self.embed_and_classify(&data.features.select_rows(&idx))?;
            correct += out
                .probs
                .iter_rows()
                .zip(&data.labels[start..end])
                .filter(|(row, &label)| self.variant.predict_class(row) == label)
                .count();
        }
        Ok(correct as f64 / data.labels.len() as f64)
    }

    pub fn to_container(&self, config: Option<&TrainConfig>) -> Container {
        let mut tensors = Vec::new();
        let embedder = self.embedder.export("embedder", &mut tensors);
        let head = self.head.export("head", &mut tensors);
        let regressors: Vec<NetworkHeader> = self
            .regressors
            .iter()
            .enumerate()
            .map(|(j, r)| r.export(&format!("regressor.{j}"), &mut tensors))
            .collect();
        Container {
            meta: serde_json::json!({
                "kind": "pepr-model",
                "variant": self.variant,
                "width_factor": self.width_factor,
                "seed": self.seed,
                "train_config": config,
                "embedder": embedder,
                "head": head,
                "regressors": regressors,
            }),
            tensors,
        }
    }

    pub fn from_container(c: &Container) -> Result<(Self, Option<TrainConfig>)> {
        let meta = &c.meta;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("pepr-model") {
            return Err(Error::Format("checkpoint is not a model bundle".into()));
        }
        let field = |name: &str| {
            meta.get(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("model bundle lacks `{name}`")))
        };
        let variant: HeadVariant = serde_json::from_value(field("variant")?)?;
        let width_factor: f64 = serde_json::from_value(field("width_factor")?)?;
        let seed: u64 = serde_json::from_value(field("seed")?)?;
        let config: Option<TrainConfig> = serde_json::from_value(field("train_config")?)?;
        let eh: NetworkHeader = serde_json::from_value(field("embedder")?)?;
        let hh: NetworkHeader = serde_json::from_value(field("head")?)?;
        let rh: Vec<NetworkHeader> = serde_json::from_value(field("regressors")?)?;
        let tensors = c.tensor_map();
        let model = Self {
            embedder: Network::import(&eh, "embedder", &tensors)?,
            head: Network::import(&hh, "head", &tensors)?,
            regressors: rh
                .iter()
                .enumerate()
                .map(|(j, h)| Network::import(h, &format!("regressor.{j}"), &tensors))
                .collect::<Result<_>>()?,
            variant,
            width_factor,
            seed,
        };
        if model.head.output_dim() != model.variant.width() {
            return Err(Error::Format("head width does not match its variant".into()));
        }
        Ok((model, config))
    }

    pub fn save(&self, path: impl AsRef<Path>, config: Option<&TrainConfig>) -> Result<()> {
        self.to_container(config).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<TrainConfig>)> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Builds the untrained model: embedder, head (flat when `scheme` is `None`) and one regressor.
pub fn build_pepr_model(
    input_dim: usize,
    classes: usize,
    scheme: Option<GroupScheme>,
    width_factor: f64,
    seed: u64,
) -> Result<PeprModel> {
    let variant = match scheme {
        Some(s) => {
            if s.num_classes() != classes {
                return Err(Error::config(format!(
                    "group scheme covers {} classes, expected {classes}",
                    s.num_classes()
                )));
            }
            HeadVariant::Grouped(s)
        }
        None => HeadVariant::Flat { classes },
    };
    PeprModel::build(input_dim, variant, width_factor, seed, 1)
}

pub(crate) fn chunks(len: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..len).step_by(size.max(1)).map(move |s| (s, (s + size).min(len)))
}
