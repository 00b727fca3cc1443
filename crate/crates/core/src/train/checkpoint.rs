//! JSON checkpoint format.
//!
//! ```text
//! {"format_version":1, "config":{…}, "y_mean":[…],
//!  "params":[{"name":…, "shape":[…], "data":[…]}, …],
//!  "adagrad":{…}|null, "metrics":{…}}
//! ```
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! round-trip semantics, so `load(save(c)) == c` bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdagradSnapshot, AdagradState, CheckpointError, EpochMetrics, TrainConfig};
use crate::model::Model;
use crate::ndgrad::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: &str, t: &Tensor) -> Self {
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor, CheckpointError> {
        Tensor::new(self.shape.clone(), self.data.clone()).map_err(|_| CheckpointError::Shape {
            name: self.name.clone(),
            shape: self.shape.clone(),
            len: self.data.len(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub history: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
}

impl TrainMetrics {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.history.last()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub y_mean: Vec<f64>,
    pub params: Vec<NamedTensor>,
    pub adagrad: Option<AdagradSnapshot>,
    pub metrics: TrainMetrics,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        config: &TrainConfig,
        optimizer: Option<&AdagradState>,
        metrics: TrainMetrics,
    ) -> Self {
        let params = model
            .store()
            .iter()
            .map(|p| NamedTensor::new(&p.name, &p.value))
            .collect();
        let adagrad = optimizer.map(|opt| AdagradSnapshot {
            learning_rate: opt.learning_rate,
            damping: opt.damping,
            steps: opt.steps,
            accumulators: model
                .store()
                .iter()
                .zip(&opt.accumulators)
                .map(|(p, acc)| NamedTensor::new(&p.name, acc))
                .collect(),
        });
        Self {
            format_version: FORMAT_VERSION,
            config: config.clone(),
            y_mean: model.y_mean().to_vec(),
            params,
            adagrad,
            metrics,
        }
    }

    /// Rebuilds the model, validating every parameter's shape.
    pub fn model(&self) -> Result<Model, CheckpointError> {
        let named = self
            .params
            .iter()
            .map(|p| Ok((p.name.clone(), p.to_tensor()?)))
            .collect::<Result<Vec<_>, CheckpointError>>()?;
        Ok(Model::from_named(self.config.model.clone(), named, self.y_mean.clone())?)
    }

    fn validate(&self) -> Result<(), CheckpointError> {
        for p in &self.params {
            p.to_tensor()?;
        }
        if let Some(opt) = &self.adagrad {
            for a in &opt.accumulators {
                a.to_tensor()?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(CheckpointError::from_json)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or(CheckpointError::MissingVersion)?;
        if found != FORMAT_VERSION as u64 {
            return Err(CheckpointError::Version {
                expected: FORMAT_VERSION,
                found,
            });
        }
        // parse from text rather than from `value` so float parsing stays exact
        let c: Checkpoint = serde_json::from_str(text).map_err(CheckpointError::from_json)?;
        c.validate()?;
        Ok(c)
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(c.to_json()?.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let mut text = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut text)?;
    Checkpoint::from_json(&text)
}
