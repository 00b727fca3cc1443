use serde::{Deserialize, Serialize};

use super::{check_dims, EvalError};
use crate::data::{MultimodalDataset, Split};
use crate::gaussian::{parzen_log_density, Rng};
use crate::model::{Model, ModelError};
use crate::ndgrad::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParzenConfig {
    pub samples: usize,
    pub sigmas: Vec<f64>,
    pub seed: u64,
}

impl ParzenConfig {
    /// `count` log-spaced bandwidths from `lo` to `hi` inclusive.
    pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        if count == 1 {
            return vec![lo];
        }
        let (a, b) = (lo.ln(), hi.ln());
        let mut grid: Vec<f64> = (0..count)
            .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
            .collect();
        grid[0] = lo;
        grid[count - 1] = hi;
        grid
    }

    pub fn new(seed: u64) -> Self {
        Self {
            samples: 100,
            sigmas: Self::log_grid(0.01, 1.0, 20),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidParzen(m));
        if self.samples < 2 {
            return bad(format!("need at least 2 samples per instance, got {}", self.samples));
        }
        if self.sigmas.is_empty() {
            return bad("empty bandwidth grid".into());
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("bandwidths must be positive and finite".into());
        }
        if self.sigmas.windows(2).any(|w| w[0] >= w[1]) {
            return bad("bandwidth grid must be strictly ascending".into());
        }
        Ok(())
    }
}

/// Anything that can draw images conditioned on an attribute vector.
pub trait SampleSource {
    fn x_dim(&self) -> usize;
    fn samples(&self, y: &[f64], count: usize, rng: &mut Rng) -> Result<Tensor, ModelError>;
}

impl SampleSource for Model {
    fn x_dim(&self) -> usize {
        self.config().x_dim
    }

    /// Decoder means at latents drawn from the conditional prior.
    fn samples(&self, y: &[f64], count: usize, rng: &mut Rng) -> Result<Tensor, ModelError> {
        let eps = rng.normal_tensor(&[count, self.latent_dim()]);
        let ys = Tensor::matrix(count, y.len(), y.repeat(count))?;
        self.generate_from_attributes(&ys, Some(&eps))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParzenReport {
    pub sigma: f64,
    pub sigmas: Vec<f64>,
    /// Mean validation log-likelihood for every grid bandwidth.
    pub validation_scores: Vec<f64>,
    pub test_mean_ll: f64,
    /// Per test instance, in split order.
    pub test_ll: Vec<f64>,
}

/// Log-likelihood of one instance under every bandwidth. Samples are
/// drawn from a stream keyed by the instance's dataset index, so scores do
/// not depend on the order instances are visited in.
fn instance_scores(
    source: &dyn SampleSource,
    dataset: &MultimodalDataset,
    index: usize,
    config: &ParzenConfig,
    sigmas: &[f64],
) -> Result<Vec<f64>, EvalError> {
    let mut rng = Rng::for_stream(config.seed, index as u64);
    let samples = source.samples(dataset.y.row(index), config.samples, &mut rng)?;
    let x = dataset.x.row(index);
    sigmas
        .iter()
        .map(|&s| parzen_log_density(x, &samples, s).map_err(|e| EvalError::Model(e.into())))
        .collect()
}

/// First index of the maximum, so ties resolve to the smaller bandwidth.
fn best_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// Picks σ on the validation split (ties go to the smaller σ) and scores
/// the test split at that σ.
pub fn parzen_eval(
    source: &dyn SampleSource,
    dataset: &MultimodalDataset,
    config: &ParzenConfig,
) -> Result<ParzenReport, EvalError> {
    config.validate()?;
    if source.x_dim() != dataset.x_dim() {
        return Err(EvalError::DimensionMismatch {
            what: "image",
            expected: source.x_dim(),
            found: dataset.x_dim(),
        });
    }
    for split in [Split::Validation, Split::Test] {
        if dataset.split(split).is_empty() {
            return Err(EvalError::EmptySplit(split));
        }
    }
    let mut totals = vec![0.0; config.sigmas.len()];
    for &i in &dataset.validation {
        for (t, s) in totals
            .iter_mut()
            .zip(instance_scores(source, dataset, i, config, &config.sigmas)?)
        {
            *t += s;
        }
    }
    let n_val = dataset.validation.len() as f64;
    let validation_scores: Vec<f64> = totals.iter().map(|t| t / n_val).collect();
    let sigma = config.sigmas[best_index(&validation_scores)];
    let test_ll = dataset
        .test
        .iter()
        .map(|&i| Ok(instance_scores(source, dataset, i, config, &[sigma])?[0]))
        .collect::<Result<Vec<f64>, EvalError>>()?;
    let test_mean_ll = test_ll.iter().sum::<f64>() / test_ll.len() as f64;
    Ok(ParzenReport {
        sigma,
        sigmas: config.sigmas.clone(),
        validation_scores,
        test_mean_ll,
        test_ll,
    })
}

/// [`parzen_eval`] for a model, after checking it matches the dataset.
pub fn parzen_eval_model(model: &Model, dataset: &MultimodalDataset, config: &ParzenConfig) -> Result<ParzenReport, EvalError> {
    check_dims(model, dataset)?;
    parzen_eval(model, dataset, config)
}
