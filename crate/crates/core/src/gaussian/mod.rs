//! Diagonal-Gaussian machinery: closed-form KL, log-densities,
//! reparametrized sampling and Parzen-window density estimates.
//!
//! Every distribution carries a log-variance, so the covariance is
//! `diag(exp(logvar))` and the standard deviation is `exp(logvar / 2)`.
//! Tape-level functions work row-wise on `batch × d` nodes and return one
//! value per row; the eager functions wrap them for concrete tensors.

mod rng;

pub use rng::Rng;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndgrad::{GradError, Tape, Tensor, Var};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GaussianError {
    #[error(transparent)]
    Shape(#[from] GradError),
    #[error("parzen window needs at least one sample")]
    NoSamples,
    #[error("parzen bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
}

/// How the reconstruction log-density is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconMode {
    /// The true Gaussian log-density.
    #[default]
    Exact,
    /// `-[Σ (μ - x)² / (2 e^{logvar}) + Σ e^{logvar}]`, kept for fidelity
    /// experiments; not a normalized density.
    Paper,
}

impl std::str::FromStr for ReconMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "paper" => Ok(Self::Paper),
            other => Err(format!("unknown recon mode {other:?} (expected exact|paper)")),
        }
    }
}

impl std::fmt::Display for ReconMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Paper => "paper",
        })
    }
}

/// Diagonal Gaussian given by mean and log-variance. Both tensors may hold
/// a batch of rows, one distribution per row.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDiag {
    pub mean: Tensor,
    pub logvar: Tensor,
}

impl GaussianDiag {
    pub fn new(mean: Tensor, logvar: Tensor) -> Result<Self, GaussianError> {
        if mean.dims2()? != logvar.dims2()? {
            return Err(GradError::ShapeMismatch {
                op: "gaussian",
                lhs: mean.shape().to_vec(),
                rhs: logvar.shape().to_vec(),
            }
            .into());
        }
        Ok(Self { mean, logvar })
    }

    /// `N(0, I)` over `rows × d`.
    pub fn standard(rows: usize, d: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[rows, d]),
            logvar: Tensor::zeros(&[rows, d]),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }

    pub fn std(&self) -> Tensor {
        crate::ndgrad::ops::map(&self.logvar, |l| (0.5 * l).exp())
    }

    pub fn on_tape(&self, tape: &mut Tape) -> GaussianVar {
        GaussianVar {
            mean: tape.leaf(self.mean.clone()),
            logvar: tape.leaf(self.logvar.clone()),
        }
    }
}

/// A Gaussian whose parameters live on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVar {
    pub mean: Var,
    pub logvar: Var,
}

impl GaussianVar {
    pub fn value(&self, tape: &Tape) -> GaussianDiag {
        GaussianDiag {
            mean: tape.value(self.mean).clone(),
            logvar: tape.value(self.logvar).clone(),
        }
    }
}

/// Row-wise `KL(q ‖ p)`:
/// `½ Σ [p.lv − q.lv + e^{q.lv − p.lv} + (q.μ − p.μ)² e^{−p.lv} − 1]`.
pub fn kl_rows(tape: &mut Tape, q: GaussianVar, p: GaussianVar) -> Result<Var, GradError> {
    let lv_diff = tape.sub(p.logvar, q.logvar)?;
    let neg = tape.scale(lv_diff, -1.0)?;
    let ratio = tape.exp(neg)?;
    let mean_diff = tape.sub(q.mean, p.mean)?;
    let sq = tape.square(mean_diff)?;
    let neg_plv = tape.scale(p.logvar, -1.0)?;
    let inv_var = tape.exp(neg_plv)?;
    let maha = tape.mul(sq, inv_var)?;
    let a = tape.add(lv_diff, ratio)?;
    let b = tape.add(a, maha)?;
    let c = tape.add_scalar(b, -1.0)?;
    let rows = tape.sum_rows(c)?;
    tape.scale(rows, 0.5)
}

/// Row-wise log-density of `x` under `g`.
pub fn log_density_rows(
    tape: &mut Tape,
    x: Var,
    g: GaussianVar,
    mode: ReconMode,
) -> Result<Var, GradError> {
    let diff = tape.sub(g.mean, x)?;
    let sq = tape.square(diff)?;
    let neg_lv = tape.scale(g.logvar, -1.0)?;
    let inv_var = tape.exp(neg_lv)?;
    let maha = tape.mul(sq, inv_var)?;
    match mode {
        ReconMode::Exact => {
            let t = tape.add(maha, g.logvar)?;
            let t = tape.add_scalar(t, LN_2PI)?;
            let rows = tape.sum_rows(t)?;
            tape.scale(rows, -0.5)
        }
        ReconMode::Paper => {
            let half = tape.scale(maha, 0.5)?;
            let var = tape.exp(g.logvar)?;
            let t = tape.add(half, var)?;
            let rows = tape.sum_rows(t)?;
            tape.scale(rows, -1.0)
        }
    }
}

/// `mean + eps ⊙ exp(logvar / 2)`.
pub fn reparam(tape: &mut Tape, g: GaussianVar, eps: Var) -> Result<Var, GradError> {
    let half = tape.scale(g.logvar, 0.5)?;
    let std = tape.exp(half)?;
    let noise = tape.mul(eps, std)?;
    tape.add(g.mean, noise)
}

/// `KL(q ‖ p)` summed over all rows (a single KL for one-row inputs).
pub fn kl_diag(q: &GaussianDiag, p: &GaussianDiag) -> Result<f64, GaussianError> {
    let mut tape = Tape::new();
    let qv = q.on_tape(&mut tape);
    let pv = p.on_tape(&mut tape);
    let rows = kl_rows(&mut tape, qv, pv)?;
    Ok(tape.value(rows).sum())
}

/// Log-density of `x` under `g`, summed over rows.
pub fn gaussian_log_density(
    x: &Tensor,
    g: &GaussianDiag,
    mode: ReconMode,
) -> Result<f64, GaussianError> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let gv = g.on_tape(&mut tape);
    let rows = log_density_rows(&mut tape, xv, gv, mode)?;
    Ok(tape.value(rows).sum())
}

pub fn reparam_sample(g: &GaussianDiag, eps: &Tensor) -> Result<Tensor, GaussianError> {
    let mut tape = Tape::new();
    let gv = g.on_tape(&mut tape);
    let e = tape.leaf(eps.clone());
    let z = reparam(&mut tape, gv, e)?;
    Ok(tape.value(z).clone())
}

/// `log (1/S) Σₛ N(x; sₛ, σ² I)` for the rows `sₛ` of `samples`,
/// evaluated with log-sum-exp.
pub fn parzen_log_density(x: &[f64], samples: &Tensor, sigma: f64) -> Result<f64, GaussianError> {
    if !(sigma > 0.0) {
        return Err(GaussianError::BadBandwidth(sigma));
    }
    let (s, d) = samples.dims2()?;
    if d != x.len() {
        return Err(GradError::ShapeMismatch {
            op: "parzen",
            lhs: vec![x.len()],
            rhs: samples.shape().to_vec(),
        }
        .into());
    }
    if s == 0 {
        return Err(GaussianError::NoSamples);
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let exponents: Vec<f64> = (0..s)
        .map(|i| {
            let dist2: f64 = samples
                .row(i)
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            -dist2 * inv
        })
        .collect();
    Ok(log_sum_exp(&exponents)
        - (s as f64).ln()
        - 0.5 * d as f64 * (LN_2PI + 2.0 * sigma.ln()))
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
