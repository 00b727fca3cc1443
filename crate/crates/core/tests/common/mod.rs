#![allow(dead_code)]

use cmma::model::{Model, ModelConfig, ModelKind};
use cmma::ndgrad::Tensor;
use nalgebra::{DMatrix, DVector};

/// J = 2 model whose decoder is affine in `z` with a fixed diagonal noise,
/// so `p(x | y)` and the true posterior are Gaussian in closed form.
pub fn linear_toy(kind: ModelKind, seed: u64, noise_logvar: f64) -> Model {
    let mut c = ModelConfig::desk(kind, 16, 4);
    c.latent_dim = 2;
    c.prior_hidden = vec![8];
    c.encoder_hidden = vec![8];
    c.decoder_hidden = vec![];
    let mut model = Model::seeded(c, seed).unwrap();
    let store = model.store_mut();
    let w = store.find("g.logvar.weight").unwrap();
    store.get_mut(w).value.data_mut().fill(0.0);
    let b = store.find("g.logvar.bias").unwrap();
    store.get_mut(b).value.data_mut().fill(noise_logvar);
    model
}

pub struct ClosedForm {
    pub loglik: f64,
    /// `KL(q(z | x, y) ‖ p(z | x, y))`.
    pub posterior_kl: f64,
}

fn col(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Reads the affine decoder back through the public forward pass, then
/// integrates it analytically against the model's prior.
pub fn closed_form(model: &Model, x: &[f64], y: &[f64]) -> ClosedForm {
    let j = model.latent_dim();
    let m = x.len();
    let yt = Tensor::matrix(1, y.len(), y.to_vec()).unwrap();
    let decode = |z: Vec<f64>| model.decoder(&Tensor::matrix(1, j, z).unwrap(), &yt).unwrap();
    let origin = decode(vec![0.0; j]);
    let b = col(origin.mean.data());
    let d = col(&origin.logvar.data().iter().map(|l| l.exp()).collect::<Vec<_>>());
    let mut w = DMatrix::zeros(m, j);
    for k in 0..j {
        let mut z = vec![0.0; j];
        z[k] = 1.0;
        let mean = col(decode(z).mean.data());
        w.set_column(k, &(mean - &b));
    }

    let prior = model.prior_net(&yt).unwrap();
    let mu_p = col(prior.mean.data());
    let sigma_p = DMatrix::from_diagonal(&col(&prior.logvar.data().iter().map(|l| l.exp()).collect::<Vec<_>>()));

    let cov = &w * &sigma_p * w.transpose() + DMatrix::from_diagonal(&d);
    let chol = cov.clone().cholesky().expect("marginal covariance is positive definite");
    let r = col(x) - (&w * &mu_p + &b);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let maha = r.dot(&chol.solve(&r));
    let loglik = -0.5 * (maha + logdet + m as f64 * (2.0 * std::f64::consts::PI).ln());

    let d_inv = DMatrix::from_diagonal(&d.map(|v| 1.0 / v));
    let sigma_p_inv = sigma_p.clone().try_inverse().unwrap();
    let precision = &sigma_p_inv + w.transpose() * &d_inv * &w;
    let post_cov = precision.clone().try_inverse().unwrap();
    let post_mean = &post_cov * (&sigma_p_inv * &mu_p + w.transpose() * &d_inv * (col(x) - &b));

    let q = model.encoder(&Tensor::matrix(1, m, x.to_vec()).unwrap(), &yt).unwrap();
    let mu_q = col(q.mean.data());
    let var_q = col(&q.logvar.data().iter().map(|l| l.exp()).collect::<Vec<_>>());
    let diff = &post_mean - &mu_q;
    let trace: f64 = (0..j).map(|k| precision[(k, k)] * var_q[k]).sum();
    let posterior_kl = 0.5
        * (trace + diff.dot(&(&precision * &diff)) - j as f64 + post_cov.determinant().ln()
            - var_q.iter().map(|v| v.ln()).sum::<f64>());
    ClosedForm { loglik, posterior_kl }
}
