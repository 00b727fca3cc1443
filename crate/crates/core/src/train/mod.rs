//! Minibatch Adagrad training of the variational bound, gradient checking,
//! and JSON checkpoints.

mod adagrad;
mod checkpoint;
mod gradcheck;

pub use adagrad::{AdagradSnapshot, AdagradState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, TrainMetrics, FORMAT_VERSION};
pub use gradcheck::{grad_check, BlockError, GradCheckOptions, GradCheckReport, MAX_GRADCHECK_PARAMS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::MultimodalDataset;
use crate::eval;
use crate::gaussian::Rng;
use crate::model::{BoundBreakdown, BoundNoise, Init, Model, ModelConfig, ModelError};
use crate::ndgrad::{GradError, Tape};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset has {found} {what} columns but the model expects {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("gradient check needs at most {limit} parameters, model has {found}")]
    TooManyParameters { limit: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grad(#[from] GradError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { expected: u32, found: u64 },
    #[error("checkpoint has no format_version field")]
    MissingVersion,
    #[error("checkpoint file is truncated: {0}")]
    Truncated(String),
    #[error("malformed checkpoint: {0}")]
    Parse(String),
    #[error("parameter {name}: shape {shape:?} does not match {len} stored values")]
    Shape { name: String, shape: Vec<usize>, len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CheckpointError {
    fn from_json(e: serde_json::Error) -> Self {
        if e.is_eof() {
            Self::Truncated(e.to_string())
        } else {
            Self::Parse(e.to_string())
        }
    }
}

impl From<serde_json::Error> for CheckpointError {
    fn from(e: serde_json::Error) -> Self {
        Self::from_json(e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub damping: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, epochs: usize, seed: u64) -> Self {
        Self {
            model,
            epochs,
            batch_size: 100,
            learning_rate: 0.01,
            damping: 1e-8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "damping must be non-negative, got {}",
                self.damping
            )));
        }
        self.model.validate()?;
        Ok(())
    }

    /// Noise seed for validation and test bounds.
    pub fn eval_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean single-sample bound over the epoch's minibatches.
    pub train_bound: f64,
    pub validation: Option<BoundBreakdown>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Snapshot at the epoch with the highest validation bound.
    pub best: Option<Checkpoint>,
}

impl TrainOutcome {
    pub fn history(&self) -> &[EpochMetrics] {
        &self.checkpoint.metrics.history
    }
}

fn check_dims(dataset: &MultimodalDataset, config: &ModelConfig) -> Result<(), TrainError> {
    if dataset.x_dim() != config.x_dim {
        return Err(TrainError::DimensionMismatch {
            what: "image",
            expected: config.x_dim,
            found: dataset.x_dim(),
        });
    }
    if dataset.y_dim() != config.y_dim {
        return Err(TrainError::DimensionMismatch {
            what: "attribute",
            expected: config.y_dim,
            found: dataset.y_dim(),
        });
    }
    Ok(())
}

fn non_finite(e: ModelError, epoch: usize, batch: usize) -> TrainError {
    match e {
        ModelError::Shape(GradError::NonFinite { .. }) => TrainError::NonFinite { epoch, batch },
        other => other.into(),
    }
}

/// Trains from a fresh seeded initialization.
///
/// Each epoch shuffles the training indices, then for every minibatch
/// draws one noise vector per example, backpropagates the negative mean
/// bound and takes one Adagrad step on every parameter.
pub fn train(dataset: &MultimodalDataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(dataset, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    dataset: &MultimodalDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_dims(dataset, &config.model)?;
    if dataset.train.is_empty() {
        return Err(TrainError::InvalidConfig("training split is empty".into()));
    }
    let mut rng = Rng::new(config.seed);
    let mut model = Model::new(config.model.clone(), &mut Init::Random(&mut rng))?;
    model.set_y_mean(dataset.train_y_mean())?;
    let mut opt = AdagradState::new(model.store(), config.learning_rate, config.damping);
    let latent = config.model.latent_dim;

    let mut order = dataset.train.clone();
    let mut metrics = TrainMetrics::default();
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = dataset.batch(idx);
            let noise = BoundNoise::sample(&mut rng, idx.len(), latent);
            let mut tape = Tape::new();
            let vars = model
                .bound_on_tape(model.store(), &mut tape, &x, &y, &noise)
                .map_err(|e| non_finite(e, epoch, b))?;
            let loss = model
                .loss_on_tape(&mut tape, &vars, idx.len())
                .map_err(|e| non_finite(e, epoch, b))?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b });
            }
            total -= value * idx.len() as f64;
            let store = model.store_mut();
            store.zero_grad();
            tape.backward_into(loss, store)?;
            opt.step(store)?;
        }
        let validation = if dataset.validation.is_empty() {
            None
        } else {
            Some(eval::mean_bound(&model, dataset, &dataset.validation, config.eval_seed())?)
        };
        let m = EpochMetrics {
            epoch,
            train_bound: total / order.len() as f64,
            validation,
        };
        on_epoch(&m);
        metrics.history.push(m);
        if let Some(v) = validation {
            if best.as_ref().map_or(true, |(b, _)| v.bound > *b) {
                metrics.best_epoch = Some(epoch);
                let snapshot = Checkpoint::from_model(&model, config, Some(&opt), metrics.clone());
                best = Some((v.bound, snapshot));
            }
        }
    }
    let checkpoint = Checkpoint::from_model(&model, config, Some(&opt), metrics);
    Ok(TrainOutcome {
        checkpoint,
        best: best.map(|(_, c)| c),
    })
}
