//! Out-of-distribution detection by predicted embedding power regression.
//!
//! A classifier (embedder + flat or grouped softmax head) is trained on
//! in-distribution features. Alongside it, and without any gradient flowing
//! back into the classifier, one or more anchored regressors learn to predict
//! the batch-normalized embedding from the predicted class distribution. The
//! mean squared positive part of that prediction (optionally plus the mean
//! squared embedding) is the in-distribution score.
//!
//! Modules:
//! - [`nn`]: layers, losses, Adam, gradient checks, checkpoints
//! - [`model`]: embedder/head/regressor assembly and joint training
//! - [`scoring`]: PEPR, C-PEPR and the baseline scores
//! - [`metrics`]: AUROC, AUPR, FPR at fixed TPR, run aggregation and reports
//! - [`data`]: synthetic benchmarks, feature files, the feature cache

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scoring;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{GroupScheme, HeadVariant, PeprModel, TrainConfig};
pub use scoring::{Method, ScoreVector};
pub use tensor::Tensor2;
