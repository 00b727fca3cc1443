//! The conditional multimodal autoencoder and its CVAE baseline.
//!
//! A CMMA is a directed model `y → z → x`: the prior network `f` maps the
//! conditioning attributes to a Gaussian over the latent `z`, the decoder
//! `g` maps `z` to a Gaussian over the image `x`, and the encoder `h`
//! approximates the posterior over `z` from `(x, y)`. An optional
//! attribute decoder `h₂` maps `z` back to a Gaussian over `y`.
//!
//! The CVAE shares the encoder and decoder roles but uses a fixed standard
//! normal prior and feeds `y` to the decoder alongside `z`.
//!
//! All public methods take row-batched tensors (`batch × width`); a 1-D
//! input is a batch of one.

mod mlp;

pub use mlp::{Init, Mlp, MlpSpec, LOGVAR_MAX, LOGVAR_MIN};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::{self, GaussianDiag, GaussianError, ReconMode, Rng};
use crate::ndgrad::{ops, GradError, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] GradError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("attribute inference requires the y-decoder")]
    MissingYDecoder,
    #[error("missing parameter {0:?}")]
    MissingParameter(String),
    #[error("unexpected parameter {0:?}")]
    UnexpectedParameter(String),
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("noise has shape {found:?}, expected {expected:?}")]
    NoiseShape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cmma,
    Cvae,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cmma" => Ok(Self::Cmma),
            "cvae" => Ok(Self::Cvae),
            other => Err(format!("unknown model {other:?} (expected cmma|cvae)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cmma => "cmma",
            Self::Cvae => "cvae",
        })
    }
}

/// Architecture and objective settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub x_dim: usize,
    pub y_dim: usize,
    pub latent_dim: usize,
    /// Hidden widths of the prior network `f` (CMMA only).
    pub prior_hidden: Vec<usize>,
    /// Hidden widths of the encoder `h`.
    pub encoder_hidden: Vec<usize>,
    /// Hidden widths of the decoder `g`.
    pub decoder_hidden: Vec<usize>,
    /// Hidden widths of the attribute decoder `h₂` (built when `lambda_y > 0`).
    pub y_decoder_hidden: Vec<usize>,
    pub encoder_uses_y: bool,
    pub recon_mode: ReconMode,
    pub lambda_y: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: J = 8, f [64], h [256, 64], g [64, 256], h₂ [64].
    pub fn desk(kind: ModelKind, x_dim: usize, y_dim: usize) -> Self {
        Self {
            kind,
            x_dim,
            y_dim,
            latent_dim: 8,
            prior_hidden: vec![64],
            encoder_hidden: vec![256, 64],
            decoder_hidden: vec![64, 256],
            y_decoder_hidden: vec![64],
            encoder_uses_y: true,
            recon_mode: ReconMode::Exact,
            lambda_y: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.x_dim == 0 || self.y_dim == 0 || self.latent_dim == 0 {
            return bad("x_dim, y_dim and latent_dim must be at least 1");
        }
        let widths = [
            &self.prior_hidden,
            &self.encoder_hidden,
            &self.decoder_hidden,
            &self.y_decoder_hidden,
        ];
        if widths.iter().any(|w| w.contains(&0)) {
            return bad("hidden widths must be at least 1");
        }
        if !(self.lambda_y >= 0.0) || !self.lambda_y.is_finite() {
            return bad("lambda_y must be a finite non-negative number");
        }
        if self.kind == ModelKind::Cvae && self.lambda_y > 0.0 {
            return bad("the attribute term is only defined for cmma");
        }
        Ok(())
    }

    pub fn has_y_decoder(&self) -> bool {
        self.kind == ModelKind::Cmma && self.lambda_y > 0.0
    }

    fn encoder_spec(&self) -> MlpSpec {
        let input = self.x_dim + if self.encoder_uses_y { self.y_dim } else { 0 };
        MlpSpec::new(input, &self.encoder_hidden, self.latent_dim)
    }

    fn decoder_spec(&self) -> MlpSpec {
        let input = self.latent_dim
            + match self.kind {
                ModelKind::Cmma => 0,
                ModelKind::Cvae => self.y_dim,
            };
        MlpSpec::new(input, &self.decoder_hidden, self.x_dim)
    }

    /// Total trainable scalar count.
    pub fn num_params(&self) -> usize {
        let mut n = self.encoder_spec().num_params() + self.decoder_spec().num_params();
        if self.kind == ModelKind::Cmma {
            n += MlpSpec::new(self.y_dim, &self.prior_hidden, self.latent_dim).num_params();
        }
        if self.has_y_decoder() {
            n += MlpSpec::new(self.latent_dim, &self.y_decoder_hidden, self.y_dim).num_params();
        }
        n
    }
}

/// Per-example decomposition of the variational bound.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub y_term: f64,
    pub lambda_y: f64,
    pub bound: f64,
}

impl BoundBreakdown {
    pub fn new(recon: f64, kl: f64, y_term: f64, lambda_y: f64) -> Self {
        Self {
            recon,
            kl,
            y_term,
            lambda_y,
            bound: recon - kl + lambda_y * y_term,
        }
    }

    /// Component-wise mean. Panics on an empty slice.
    pub fn mean(items: &[BoundBreakdown]) -> Self {
        assert!(!items.is_empty(), "mean of no bounds");
        let n = items.len() as f64;
        let avg = |f: fn(&BoundBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self {
            recon: avg(|b| b.recon),
            kl: avg(|b| b.kl),
            y_term: avg(|b| b.y_term),
            lambda_y: items[0].lambda_y,
            bound: avg(|b| b.bound),
        }
    }
}

/// Standard-normal noise for one bound evaluation: `latent` drives the
/// posterior sample, `prior` the prior sample used by the attribute term.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundNoise {
    pub latent: Tensor,
    pub prior: Option<Tensor>,
}

impl BoundNoise {
    pub fn zeros(rows: usize, latent_dim: usize) -> Self {
        Self {
            latent: Tensor::zeros(&[rows, latent_dim]),
            prior: Some(Tensor::zeros(&[rows, latent_dim])),
        }
    }

    pub fn sample(rng: &mut Rng, rows: usize, latent_dim: usize) -> Self {
        let latent = rng.normal_tensor(&[rows, latent_dim]);
        let prior = rng.normal_tensor(&[rows, latent_dim]);
        Self {
            latent,
            prior: Some(prior),
        }
    }
}

/// Row-wise bound terms recorded on a tape, each `batch × 1`.
#[derive(Clone, Copy, Debug)]
pub struct BoundVars {
    pub recon: Var,
    pub kl: Var,
    pub y_term: Option<Var>,
}

/// Attribute scores decoded from images and their 0.5-thresholded bits.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeInference {
    pub scores: Tensor,
    pub bits: Tensor,
}

/// Elementwise `v ≥ 0.5 → 1`, else `0`.
pub fn threshold(t: &Tensor) -> Tensor {
    ops::map(t, |v| if v >= 0.5 { 1.0 } else { 0.0 })
}

fn rows(t: &Tensor) -> Result<Tensor, GradError> {
    t.as_matrix()
}

/// Parameters and network structure of a CMMA or CVAE.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    prior: Option<Mlp>,
    encoder: Mlp,
    decoder: Mlp,
    y_decoder: Option<Mlp>,
    y_mean: Vec<f64>,
}

impl Model {
    pub fn new(config: ModelConfig, init: &mut Init<'_>) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = &config;
        // creation order fixes both parameter order and the init stream
        let prior = match c.kind {
            ModelKind::Cmma => Some(Mlp::build(
                &mut store,
                "f",
                MlpSpec::new(c.y_dim, &c.prior_hidden, c.latent_dim),
                init,
            )?),
            ModelKind::Cvae => None,
        };
        let encoder = Mlp::build(&mut store, "h", c.encoder_spec(), init)?;
        let decoder = Mlp::build(&mut store, "g", c.decoder_spec(), init)?;
        let y_decoder = if c.has_y_decoder() {
            Some(Mlp::build(
                &mut store,
                "h2",
                MlpSpec::new(c.latent_dim, &c.y_decoder_hidden, c.y_dim),
                init,
            )?)
        } else {
            None
        };
        let y_mean = vec![0.5; c.y_dim];
        Ok(Self {
            config,
            store,
            prior,
            encoder,
            decoder,
            y_decoder,
            y_mean,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        Self::new(config, &mut Init::Zeros)
    }

    /// Seeded random initialization.
    pub fn seeded(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = Rng::new(seed);
        Self::new(config, &mut Init::Random(&mut rng))
    }

    /// Rebuilds a model from named parameter values, checking that the set
    /// of names and every shape matches the architecture in `config`.
    pub fn from_named(
        config: ModelConfig,
        params: Vec<(String, Tensor)>,
        y_mean: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let mut model = Self::zeros(config)?;
        let mut seen = vec![false; model.store.len()];
        for (name, value) in params {
            let id = model
                .store
                .find(&name)
                .ok_or_else(|| ModelError::UnexpectedParameter(name.clone()))?;
            let slot = &mut model.store.get_mut(id).value;
            if slot.shape() != value.shape() {
                return Err(ModelError::ParameterShape {
                    name,
                    expected: slot.shape().to_vec(),
                    found: value.shape().to_vec(),
                });
            }
            *slot = value;
            seen[id.index()] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let name = model.store.iter().nth(i).expect("index in range").name.clone();
            return Err(ModelError::MissingParameter(name));
        }
        model.set_y_mean(y_mean)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Training-set attribute mean, used as the neutral attribute input
    /// during attribute inference.
    pub fn y_mean(&self) -> &[f64] {
        &self.y_mean
    }

    pub fn set_y_mean(&mut self, y_mean: Vec<f64>) -> Result<(), ModelError> {
        if y_mean.len() != self.config.y_dim {
            return Err(ModelError::InvalidConfig(format!(
                "attribute mean has length {}, expected {}",
                y_mean.len(),
                self.config.y_dim
            )));
        }
        self.y_mean = y_mean;
        Ok(())
    }

    /// Parameter ids grouped by network: `f`, `h`, `g`, `h2`.
    pub fn param_blocks(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let mut blocks = Vec::new();
        if let Some(f) = &self.prior {
            blocks.push(("f", f.param_ids()));
        }
        blocks.push(("h", self.encoder.param_ids()));
        blocks.push(("g", self.decoder.param_ids()));
        if let Some(h2) = &self.y_decoder {
            blocks.push(("h2", h2.param_ids()));
        }
        blocks
    }

    fn encoder_input(&self, x: &Tensor, y: &Tensor) -> Result<Tensor, GradError> {
        if self.config.encoder_uses_y {
            ops::concat(x, y)
        } else {
            Ok(x.clone())
        }
    }

    fn decoder_input(&self, z: &Tensor, y: &Tensor) -> Result<Tensor, GradError> {
        match self.config.kind {
            ModelKind::Cmma => Ok(z.clone()),
            ModelKind::Cvae => ops::concat(z, y),
        }
    }

    fn check_width(&self, t: &Tensor, expected: usize, op: &'static str) -> Result<(), GradError> {
        if t.cols() != expected {
            return Err(GradError::ShapeMismatch {
                op,
                lhs: vec![expected],
                rhs: t.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Conditional prior `p(z | y)`; the standard normal for a CVAE.
    pub fn prior_net(&self, y: &Tensor) -> Result<GaussianDiag, ModelError> {
        let y = rows(y)?;
        self.check_width(&y, self.config.y_dim, "prior_net")?;
        match &self.prior {
            Some(f) => Ok(f.predict(&self.store, &y)?),
            None => Ok(GaussianDiag::standard(y.rows(), self.config.latent_dim)),
        }
    }

    /// Approximate posterior `q(z | x, y)` (or `q(z | x)` when the encoder
    /// ignores `y`).
    pub fn encoder(&self, x: &Tensor, y: &Tensor) -> Result<GaussianDiag, ModelError> {
        let (x, y) = (rows(x)?, rows(y)?);
        self.check_width(&x, self.config.x_dim, "encoder")?;
        self.check_width(&y, self.config.y_dim, "encoder")?;
        Ok(self.encoder.predict(&self.store, &self.encoder_input(&x, &y)?)?)
    }

    /// `p(x | z)`; a CVAE decoder also consumes `y`, a CMMA decoder ignores it.
    pub fn decoder(&self, z: &Tensor, y: &Tensor) -> Result<GaussianDiag, ModelError> {
        let z = rows(z)?;
        self.check_width(&z, self.config.latent_dim, "decoder")?;
        let y = rows(y)?;
        if self.config.kind == ModelKind::Cvae {
            self.check_width(&y, self.config.y_dim, "decoder")?;
        }
        Ok(self.decoder.predict(&self.store, &self.decoder_input(&z, &y)?)?)
    }

    /// `q(y | z)` from the attribute decoder.
    pub fn y_decoder(&self, z: &Tensor) -> Result<GaussianDiag, ModelError> {
        let h2 = self.y_decoder.as_ref().ok_or(ModelError::MissingYDecoder)?;
        let z = rows(z)?;
        self.check_width(&z, self.config.latent_dim, "y_decoder")?;
        Ok(h2.predict(&self.store, &z)?)
    }

    /// Records the per-example bound terms on `tape`, reading parameter
    /// values from `store` (normally [`Model::store`]; finite-difference
    /// checks pass a perturbed copy).
    pub fn bound_on_tape(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        x: &Tensor,
        y: &Tensor,
        noise: &BoundNoise,
    ) -> Result<BoundVars, ModelError> {
        let (x, y) = (rows(x)?, rows(y)?);
        let n = x.rows();
        self.check_width(&x, self.config.x_dim, "bound")?;
        self.check_width(&y, self.config.y_dim, "bound")?;
        if y.rows() != n {
            return Err(GradError::ShapeMismatch {
                op: "bound",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            }
            .into());
        }
        let latent_shape = vec![n, self.config.latent_dim];
        let eps = rows(&noise.latent)?;
        if eps.shape() != latent_shape.as_slice() {
            return Err(ModelError::NoiseShape {
                expected: latent_shape,
                found: noise.latent.shape().to_vec(),
            });
        }

        let xv = tape.leaf(x.clone());
        let yv = tape.leaf(y.clone());
        let enc_in = if self.config.encoder_uses_y {
            tape.concat(xv, yv)?
        } else {
            xv
        };
        let q = self.encoder.forward(tape, store, enc_in)?;
        let prior = match &self.prior {
            Some(f) => f.forward(tape, store, yv)?,
            None => GaussianDiag::standard(n, self.config.latent_dim).on_tape(tape),
        };
        let eps_v = tape.leaf(eps);
        let z = gaussian::reparam(tape, q, eps_v)?;
        let dec_in = match self.config.kind {
            ModelKind::Cmma => z,
            ModelKind::Cvae => tape.concat(z, yv)?,
        };
        let px = self.decoder.forward(tape, store, dec_in)?;
        let recon = gaussian::log_density_rows(tape, xv, px, self.config.recon_mode)?;
        let kl = gaussian::kl_rows(tape, q, prior)?;

        let y_term = match (&self.y_decoder, self.config.lambda_y > 0.0) {
            (Some(h2), true) => {
                let eps_p = match &noise.prior {
                    Some(p) => rows(p)?,
                    None => Tensor::zeros(&latent_shape),
                };
                if eps_p.shape() != latent_shape.as_slice() {
                    return Err(ModelError::NoiseShape {
                        expected: latent_shape,
                        found: eps_p.shape().to_vec(),
                    });
                }
                let eps_pv = tape.leaf(eps_p);
                let zp = gaussian::reparam(tape, prior, eps_pv)?;
                let qy = h2.forward(tape, store, zp)?;
                Some(gaussian::log_density_rows(tape, yv, qy, ReconMode::Exact)?)
            }
            _ => None,
        };
        Ok(BoundVars { recon, kl, y_term })
    }

    /// Negative mean bound over the batch, the quantity minimized in training.
    pub fn loss_on_tape(&self, tape: &mut Tape, vars: &BoundVars, batch: usize) -> Result<Var, ModelError> {
        let r = tape.sum(vars.recon)?;
        let k = tape.sum(vars.kl)?;
        let mut total = tape.sub(r, k)?;
        if let Some(yt) = vars.y_term {
            let s = tape.sum(yt)?;
            let s = tape.scale(s, self.config.lambda_y)?;
            total = tape.add(total, s)?;
        }
        Ok(tape.scale(total, -1.0 / batch as f64)?)
    }

    /// Per-example bound with caller-supplied noise.
    pub fn bound(&self, x: &Tensor, y: &Tensor, noise: &BoundNoise) -> Result<Vec<BoundBreakdown>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.bound_on_tape(&self.store, &mut tape, x, y, noise)?;
        Ok(self.breakdowns(&tape, &vars))
    }

    pub fn breakdowns(&self, tape: &Tape, vars: &BoundVars) -> Vec<BoundBreakdown> {
        let recon = tape.value(vars.recon).data();
        let kl = tape.value(vars.kl).data();
        let yt = vars.y_term.map(|v| tape.value(v).data());
        (0..recon.len())
            .map(|i| {
                let y_term = yt.map(|t| t[i]).unwrap_or(0.0);
                let lambda = if yt.is_some() { self.config.lambda_y } else { 0.0 };
                BoundBreakdown::new(recon[i], kl[i], y_term, lambda)
            })
            .collect()
    }

    /// Decoder mean for latents drawn from the conditional prior with the
    /// given noise (`None` uses the prior mean itself).
    pub fn generate_from_attributes(&self, y: &Tensor, eps: Option<&Tensor>) -> Result<Tensor, ModelError> {
        let y = rows(y)?;
        let prior = self.prior_net(&y)?;
        let z = match eps {
            Some(e) => gaussian::reparam_sample(&prior, &rows(e)?)?,
            None => prior.mean,
        };
        Ok(self.decoder(&z, &y)?.mean)
    }

    /// `decoder(encoder(x, y).mean).mean`.
    pub fn reconstruct(&self, x: &Tensor, y: &Tensor) -> Result<Tensor, ModelError> {
        let z = self.encoder(x, y)?.mean;
        Ok(self.decoder(&z, &rows(y)?)?.mean)
    }

    /// Moves the posterior mean of `(x, y_new)` by the prior-mean shift
    /// `f_μ(y_new) − f_μ(y_orig)` and decodes the result without noise.
    pub fn modify(&self, x: &Tensor, y_orig: &Tensor, y_new: &Tensor) -> Result<Tensor, ModelError> {
        let post = self.encoder(x, y_new)?;
        let shift = ops::sub(&self.prior_net(y_new)?.mean, &self.prior_net(y_orig)?.mean)?;
        let z = ops::add(&post.mean, &shift)?;
        Ok(self.decoder(&z, &rows(y_new)?)?.mean)
    }

    /// Decodes attributes from images: the encoder sees the training-set
    /// attribute mean in place of `y`, and `h₂` decodes its posterior mean.
    pub fn infer_attributes(&self, x: &Tensor) -> Result<AttributeInference, ModelError> {
        if self.y_decoder.is_none() {
            return Err(ModelError::MissingYDecoder);
        }
        let x = rows(x)?;
        let n = x.rows();
        let mut ybar = Vec::with_capacity(n * self.config.y_dim);
        for _ in 0..n {
            ybar.extend_from_slice(&self.y_mean);
        }
        let ybar = Tensor::matrix(n, self.config.y_dim, ybar)?;
        let z = self.encoder(&x, &ybar)?.mean;
        let scores = self.y_decoder(&z)?.mean;
        let bits = threshold(&scores);
        Ok(AttributeInference { scores, bits })
    }
}
