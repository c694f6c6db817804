//! Joint classifier/regressor training.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{PeprModel, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{anchored_mse_for, lr_schedule, Adam, Gradients, Mode};
use crate::seed::{stream_rng, streams};
use crate::tensor::Tensor2;

/// In-distribution features with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatures {
    pub features: Tensor2,
    pub labels: Vec<usize>,
}

impl LabeledFeatures {
    pub fn new(features: Tensor2, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub classification_loss: f64,
    /// Mean anchored loss over regressors and steps; `None` without regressors.
    pub regression_loss: Option<f64>,
    pub learning_rate: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,classification_loss,regression_loss,learning_rate,validation_accuracy\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.epoch,
                e.classification_loss,
                opt(e.regression_loss),
                e.learning_rate,
                opt(e.validation_accuracy)
            );
        }
        s
    }
}

/// Cycles through shuffled permutations of the training rows.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(len: usize, rng: ChaCha8Rng) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            pos: len,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains a single-regressor model. Same as [`train_ensemble`] with `m = 1`.
pub fn train_pepr(
    train: &LabeledFeatures,
    validation: Option<&LabeledFeatures>,
    config: &TrainConfig,
) -> Result<(PeprModel, TrainingLog)> {
    train_ensemble(train, validation, config, 1)
}

/// Trains one classifier and `m` anchored regressors on the same stream of
/// `(ŷ, z)` pairs.
///
/// Per step: the classifier takes a train-mode forward, the classification
/// loss is backpropagated and Adam updates embedder and head. Each regressor
/// then fits the detached embedding from the detached class distribution
/// under the anchored squared-error loss and is updated by its own Adam.
/// The classifier's trajectory does not depend on `m` or the regressor seeds.
pub fn train_ensemble(
    train: &LabeledFeatures,
    validation: Option<&LabeledFeatures>,
    config: &TrainConfig,
    m: usize,
) -> Result<(PeprModel, TrainingLog)> {
    if m == 0 {
        return Err(Error::config("ensemble size must be at least 1"));
    }
    train_with_regressors(train, validation, config, m)
}

/// Like [`train_ensemble`] but allows `m = 0` (classifier only).
pub(crate) fn train_with_regressors(
    train: &LabeledFeatures,
    validation: Option<&LabeledFeatures>,
    config: &TrainConfig,
    m: usize,
) -> Result<(PeprModel, TrainingLog)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let classes = train.num_classes();
    let variant = config.head_variant(classes)?;
    let mut model = PeprModel::build(train.features.cols(), variant, config.width_factor, config.seed, m)?;

    let mut emb_opt = Adam::new(config.adam, &model.embedder);
    let mut head_opt = Adam::new(config.adam, &model.head);
    let mut reg_opts: Vec<Adam> = model.regressors.iter().map(|r| Adam::new(config.adam, r)).collect();
    let mut sampler = BatchSampler::new(train.len(), stream_rng(config.seed, streams::BATCHES));
    let mut log = TrainingLog::default();

    for epoch in 1..=config.epochs {
        let lr = lr_schedule(epoch, config.step_size, config.epochs)?;
        let mut cls_sum = 0.0;
        let mut reg_sum = 0.0;
        for step in 0..config.steps_per_epoch {
            let diverged = |detail: String| Error::Diverged { epoch, step, detail };
            let idx = sampler.next(config.batch_size);
            let x = train.features.select_rows(&idx);
            let targets: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();

            // (1) classifier
            let z = model
                .embedder
                .forward(&x, Mode::Train)
                .map_err(|e| diverged(e.to_string()))?;
            let logits = model
                .head
                .forward(&z, Mode::Train)
                .map_err(|e| diverged(e.to_string()))?;
            let (loss, dlogits) = model
                .variant
                .loss(&logits, &targets)
                .map_err(|e| diverged(e.to_string()))?;
            if !loss.is_finite() {
                return Err(diverged(format!("classification loss {loss}")));
            }
            cls_sum += loss;
            let hb = model.head.backward(&dlogits)?;
            let eb = model.embedder.backward(&hb.input_grad)?;
            if let Some(g) = &hb.param_grads {
                head_opt.step_network(&mut model.head, g, lr)?;
            }
            if let Some(g) = &eb.param_grads {
                emb_opt.step_network(&mut model.embedder, g, lr)?;
            }

            // (2) regressors on detached copies
            if model.regressors.is_empty() {
                continue;
            }
            let y_hat = model.variant.probabilities(&logits)?;
            for (reg, opt) in model.regressors.iter_mut().zip(&mut reg_opts) {
                let z_hat = reg.forward(&y_hat, Mode::Train).map_err(|e| diverged(e.to_string()))?;
                let al = anchored_mse_for(reg, &z, &z_hat, config.anchor_gamma).map_err(|e| diverged(e.to_string()))?;
                reg_sum += al.loss;
                let back = reg.backward(&al.prediction_grad)?;
                if let Some(mut g) = back.param_grads {
                    g.add_scaled(&al.anchor_grads, 1.0);
                    if !g.all_finite() {
                        return Err(diverged("non-finite regressor gradient".into()));
                    }
                    opt.step_network(reg, &g, lr)?;
                }
            }
        }
        let steps = config.steps_per_epoch as f64;
        let validation_accuracy = validation.map(|v| model.accuracy(v)).transpose()?;
        let regression_loss = (!model.regressors.is_empty()).then(|| reg_sum / (steps * model.regressors.len() as f64));
        log::debug!(
            "seed {} epoch {epoch}: cls {:.4} reg {:?} acc {:?}",
            config.seed,
            cls_sum / steps,
            regression_loss,
            validation_accuracy
        );
        log.epochs.push(EpochLog {
            epoch,
            classification_loss: cls_sum / steps,
            regression_loss,
            learning_rate: lr,
            validation_accuracy,
        });
    }
    Ok((model, log))
}

/// Trains only the classifier (no regressors).
pub fn train_classifier(
    train: &LabeledFeatures,
    validation: Option<&LabeledFeatures>,
    config: &TrainConfig,
) -> Result<(PeprModel, TrainingLog)> {
    train_with_regressors(train, validation, config, 0)
}

/// Applies `steps` Adam updates driven by the anchor term alone.
pub fn anchor_only_steps(reg: &mut crate::nn::Network, gamma: f64, batch: usize, steps: usize, lr: f64) -> Result<()> {
    let mut opt = Adam::new(Default::default(), reg);
    let empty = Tensor2::zeros(batch, reg.output_dim());
    for _ in 0..steps {
        let al = anchored_mse_for(reg, &empty, &empty, gamma)?;
        let grads: Gradients = al.anchor_grads;
        opt.step_network(reg, &grads, lr)?;
    }
    Ok(())
}
