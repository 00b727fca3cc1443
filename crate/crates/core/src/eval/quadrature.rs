//! Gauss–Hermite quadrature over the latent space for models with J ≤ 2.

use super::{EvalError, EVAL_CHUNK};
use crate::gaussian::{log_sum_exp, ReconMode, LN_2PI};
use crate::model::{BoundBreakdown, BoundNoise, Model};
use crate::ndgrad::Tensor;

pub const MAX_QUADRATURE_LATENT: usize = 2;
pub const MIN_QUADRATURE_NODES: usize = 16;
/// Past this the Newton iteration can no longer separate adjacent nodes.
pub const MAX_QUADRATURE_NODES: usize = 128;

/// Nodes and log-weights of the `k`-point rule for `∫ e^{-u²} f(u) du`,
/// nodes in descending order.
pub fn gauss_hermite(k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k > 0, "need at least one node");
    const PI_M4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; k];
    let mut w = vec![0.0; k];
    let n = k as f64;
    let mut z = 0.0f64;
    for i in 0..k.div_ceil(2) {
        z = match i {
            0 => (2.0 * n + 1.0).sqrt() - 1.85575 * (2.0 * n + 1.0).powf(-0.16667),
            1 => z - 1.14 * n.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PI_M4, 0.0);
            for j in 1..=k {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * n).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[k - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[k - 1 - i] = w[i];
    }
    (x, w.iter().map(|v| v.ln()).collect())
}

/// Tensor-product grid over `dim` dimensions: standard-normal points
/// `√2·u` and log-weights normalized to sum to one.
fn normal_grid(dim: usize, k: usize) -> (Tensor, Vec<f64>) {
    let (u, lw) = gauss_hermite(k);
    let norm = 0.5 * std::f64::consts::PI.ln();
    let total = k.pow(dim as u32);
    let mut points = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 0.0;
        for _ in 0..dim {
            let i = rem % k;
            rem /= k;
            points.push(std::f64::consts::SQRT_2 * u[i]);
            w += lw[i] - norm;
        }
        weights.push(w);
    }
    (Tensor::matrix(total, dim, points).expect("sized above"), weights)
}

fn check(model: &Model, k: usize) -> Result<(), EvalError> {
    let j = model.latent_dim();
    if j > MAX_QUADRATURE_LATENT {
        return Err(EvalError::QuadratureLatent(j));
    }
    if !(MIN_QUADRATURE_NODES..=MAX_QUADRATURE_NODES).contains(&k) {
        return Err(EvalError::QuadratureNodes {
            min: MIN_QUADRATURE_NODES,
            max: MAX_QUADRATURE_NODES,
            found: k,
        });
    }
    Ok(())
}

fn repeat_row(row: &[f64], n: usize) -> Tensor {
    Tensor::matrix(n, row.len(), row.repeat(n)).expect("sized above")
}

/// `log p(x | y) = log ∫ p_g(x | z) p_f(z | y) dz`, integrated on a
/// `k^J`-point grid after `z = f_μ(y) + √2·exp(f_σ(y)/2) ⊙ u`.
pub fn quadrature_loglik(model: &Model, x: &[f64], y: &[f64], k: usize) -> Result<f64, EvalError> {
    check(model, k)?;
    if model.config().recon_mode != ReconMode::Exact {
        return Err(EvalError::QuadratureReconMode);
    }
    let prior = model.prior_net(&Tensor::matrix(1, y.len(), y.to_vec())?)?;
    let (mu, sd) = (prior.mean.data().to_vec(), prior.std().data().to_vec());
    let (eps, log_w) = normal_grid(model.latent_dim(), k);
    let j = model.latent_dim();
    let mut terms = Vec::with_capacity(log_w.len());
    for start in (0..log_w.len()).step_by(EVAL_CHUNK * 4) {
        let end = (start + EVAL_CHUNK * 4).min(log_w.len());
        let mut z = eps.select_rows(&(start..end).collect::<Vec<_>>())?;
        for (i, v) in z.data_mut().iter_mut().enumerate() {
            *v = mu[i % j] + sd[i % j] * *v;
        }
        let px = model.decoder(&z, &repeat_row(y, end - start))?;
        for r in 0..end - start {
            let (m, lv) = (px.mean.row(r), px.logvar.row(r));
            let mut ll = 0.0;
            for d in 0..x.len() {
                let diff = m[d] - x[d];
                ll += diff * diff * (-lv[d]).exp() + lv[d] + LN_2PI;
            }
            terms.push(log_w[start + r] - 0.5 * ll);
        }
    }
    Ok(log_sum_exp(&terms))
}

/// Expectation of the single-sample bound over its noise, computed with
/// a `k^J`-point rule instead of sampling.
pub fn expected_bound(model: &Model, x: &[f64], y: &[f64], k: usize) -> Result<BoundBreakdown, EvalError> {
    check(model, k)?;
    let (eps, log_w) = normal_grid(model.latent_dim(), k);
    let mut acc = BoundBreakdown::default();
    for start in (0..log_w.len()).step_by(EVAL_CHUNK * 4) {
        let end = (start + EVAL_CHUNK * 4).min(log_w.len());
        let n = end - start;
        let noise = BoundNoise {
            latent: eps.select_rows(&(start..end).collect::<Vec<_>>())?,
            prior: None,
        };
        let parts = model.bound(&repeat_row(x, n), &repeat_row(y, n), &noise)?;
        for (b, lw) in parts.iter().zip(&log_w[start..end]) {
            let w = lw.exp();
            acc.recon += w * b.recon;
            acc.kl += w * b.kl;
            acc.y_term += w * b.y_term;
            acc.bound += w * b.bound;
            acc.lambda_y = b.lambda_y;
        }
    }
    Ok(acc)
}
