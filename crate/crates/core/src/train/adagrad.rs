use serde::{Deserialize, Serialize};

use crate::ndgrad::{GradError, ParamStore, Tensor};

/// Per-coordinate Adagrad: `G += g²; θ -= η g / (√G + δ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub learning_rate: f64,
    pub damping: f64,
    pub accumulators: Vec<Tensor>,
    pub steps: u64,
}

impl AdagradState {
    pub fn new(store: &ParamStore, learning_rate: f64, damping: f64) -> Self {
        Self {
            learning_rate,
            damping,
            accumulators: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            steps: 0,
        }
    }

    /// Applies one update using the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), GradError> {
        if store.len() != self.accumulators.len() {
            return Err(GradError::ShapeMismatch {
                op: "adagrad",
                lhs: vec![self.accumulators.len()],
                rhs: vec![store.len()],
            });
        }
        for (p, acc) in store.iter().zip(&self.accumulators) {
            if p.value.shape() != acc.shape() {
                return Err(GradError::ShapeMismatch {
                    op: "adagrad",
                    lhs: acc.shape().to_vec(),
                    rhs: p.value.shape().to_vec(),
                });
            }
        }
        let (lr, damping) = (self.learning_rate, self.damping);
        for (p, acc) in store.iter_mut().zip(&mut self.accumulators) {
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for ((theta, g2), &g) in value.iter_mut().zip(acc.data_mut()).zip(grad) {
                *g2 += g * g;
                if g != 0.0 {
                    *theta -= lr * g / (g2.sqrt() + damping);
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Serialized optimizer state, accumulators keyed by parameter name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdagradSnapshot {
    pub learning_rate: f64,
    pub damping: f64,
    pub steps: u64,
    pub accumulators: Vec<super::NamedTensor>,
}
