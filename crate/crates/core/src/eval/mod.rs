//! Evaluation battery: test-set bounds, conditional Parzen scores, the
//! Gauss–Hermite likelihood oracle, latent maps and attribute matching.

mod attributes;
mod latent;
mod parzen;
mod quadrature;

pub use attributes::{
    generation_accuracy, modification_scores, AttributeAccuracy, FlipScore, MatchMode, ModificationTable,
};
pub use latent::{latent_map, mean_stds, write_latent_csv, LatentMapRow};
pub use parzen::{parzen_eval, parzen_eval_model, ParzenConfig, ParzenReport, SampleSource};
pub use quadrature::{expected_bound, gauss_hermite, quadrature_loglik, MAX_QUADRATURE_LATENT, MIN_QUADRATURE_NODES};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, MultimodalDataset, Split};
use crate::gaussian::Rng;
use crate::model::{BoundBreakdown, BoundNoise, Model, ModelError};
use crate::ndgrad::GradError;

/// Rows per forward pass when sweeping a split.
pub(crate) const EVAL_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("the {0} split is empty")]
    EmptySplit(Split),
    #[error("dataset has {found} {what} columns but the model expects {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid Parzen config: {0}")]
    InvalidParzen(String),
    #[error("oracle restricted to J ≤ 2 (model has J = {0})")]
    QuadratureLatent(usize),
    #[error("quadrature needs {min} to {max} nodes per dimension, got {found}")]
    QuadratureNodes { min: usize, max: usize, found: usize },
    #[error("quadrature requires recon mode exact (true densities)")]
    QuadratureReconMode,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn check_dims(model: &Model, dataset: &MultimodalDataset) -> Result<(), EvalError> {
    let c = model.config();
    if dataset.x_dim() != c.x_dim {
        return Err(EvalError::DimensionMismatch {
            what: "image",
            expected: c.x_dim,
            found: dataset.x_dim(),
        });
    }
    if dataset.y_dim() != c.y_dim {
        return Err(EvalError::DimensionMismatch {
            what: "attribute",
            expected: c.y_dim,
            found: dataset.y_dim(),
        });
    }
    Ok(())
}

/// Mean single-sample bound over `indices`, with noise drawn from
/// `Rng::new(seed)` in index order.
pub fn mean_bound(
    model: &Model,
    dataset: &MultimodalDataset,
    indices: &[usize],
    seed: u64,
) -> Result<BoundBreakdown, ModelError> {
    if indices.is_empty() {
        return Err(ModelError::InvalidConfig("cannot average a bound over no examples".into()));
    }
    let mut rng = Rng::new(seed);
    let mut all = Vec::with_capacity(indices.len());
    for idx in indices.chunks(EVAL_CHUNK) {
        let (x, y) = dataset.batch(idx);
        let noise = BoundNoise::sample(&mut rng, idx.len(), model.latent_dim());
        all.extend(model.bound(&x, &y, &noise)?);
    }
    Ok(BoundBreakdown::mean(&all))
}

/// Mean bound over a split, evaluated with a fixed noise seed.
pub fn test_bound(
    model: &Model,
    dataset: &MultimodalDataset,
    split: Split,
    seed: u64,
) -> Result<BoundBreakdown, EvalError> {
    check_dims(model, dataset)?;
    let idx = dataset.split(split);
    if idx.is_empty() {
        return Err(EvalError::EmptySplit(split));
    }
    Ok(mean_bound(model, dataset, idx, seed)?)
}

impl From<GradError> for EvalError {
    fn from(e: GradError) -> Self {
        Self::Model(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

impl From<BoundBreakdown> for BoundSummary {
    fn from(b: BoundBreakdown) -> Self {
        Self {
            recon: b.recon,
            kl: b.kl,
            total: b.bound,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParzenSummary {
    pub sigma: f64,
    pub mean_ll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub train: u64,
    pub eval: u64,
}

/// The JSON report written by the evaluation commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model: String,
    pub split: Split,
    pub bound: Option<BoundSummary>,
    pub parzen: Option<ParzenSummary>,
    pub seeds: Seeds,
}

impl EvalSummary {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
