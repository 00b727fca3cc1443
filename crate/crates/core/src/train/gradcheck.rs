use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::gaussian::Rng;
use crate::model::{BoundNoise, BoundVars, Model, ModelConfig};
use crate::ndgrad::{finite_difference_gradient, relative_error, ParamStore, Tape, Tensor};

pub const MAX_GRADCHECK_PARAMS: usize = 5000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    pub trials: usize,
    pub seed: u64,
    pub batch: usize,
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor in the relative error.
    pub floor: f64,
    /// Start every trial from all-zero parameters instead of a seeded init.
    pub zero_init: bool,
    /// Flip the sign of the KL term's gradient while keeping its value.
    pub negate_kl_gradient: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            trials: 5,
            seed: 42,
            batch: 3,
            step: 1e-5,
            floor: 1e-3,
            zero_init: false,
            negate_kl_gradient: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub block: String,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub trials: usize,
    pub num_params: usize,
    /// Worst case over all trials, one entry per parameter block.
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() <= self.tolerance
    }
}

struct Problem {
    x: Tensor,
    y: Tensor,
    noise: BoundNoise,
}

impl Problem {
    fn sample(config: &ModelConfig, batch: usize, seed: u64) -> Self {
        let mut rng = Rng::for_stream(seed, 1);
        let x: Vec<f64> = (0..batch * config.x_dim).map(|_| rng.uniform()).collect();
        let y: Vec<f64> = (0..batch * config.y_dim).map(|_| rng.below(2) as f64).collect();
        Self {
            x: Tensor::matrix(batch, config.x_dim, x).expect("sized above"),
            y: Tensor::matrix(batch, config.y_dim, y).expect("sized above"),
            noise: BoundNoise::sample(&mut rng, batch, config.latent_dim),
        }
    }
}

fn record(model: &Model, store: &ParamStore, p: &Problem, negate_kl: bool) -> Result<(Tape, crate::ndgrad::Var), TrainError> {
    let mut tape = Tape::new();
    let mut vars = model.bound_on_tape(store, &mut tape, &p.x, &p.y, &p.noise)?;
    if negate_kl {
        // 2·stop(kl) − kl has kl's value and the opposite gradient
        let frozen = tape.detach(vars.kl);
        let twice = tape.scale(frozen, 2.0)?;
        vars = BoundVars {
            kl: tape.sub(twice, vars.kl)?,
            ..vars
        };
    }
    let loss = model.loss_on_tape(&mut tape, &vars, p.x.rows())?;
    Ok((tape, loss))
}

/// Compares backpropagated gradients of the full negative mean bound with
/// central finite differences, on fixed random inputs and frozen noise.
pub fn grad_check(config: &ModelConfig, options: &GradCheckOptions) -> Result<GradCheckReport, TrainError> {
    config.validate()?;
    let num_params = config.num_params();
    if num_params > MAX_GRADCHECK_PARAMS {
        return Err(TrainError::TooManyParameters {
            limit: MAX_GRADCHECK_PARAMS,
            found: num_params,
        });
    }
    if options.trials == 0 || options.batch == 0 || !(options.step > 0.0) {
        return Err(TrainError::InvalidConfig(
            "gradient check needs trials ≥ 1, batch ≥ 1 and a positive step".into(),
        ));
    }

    let mut blocks: Vec<BlockError> = Vec::new();
    for t in 0..options.trials {
        let seed = options.seed.wrapping_add(t as u64);
        let mut model = if options.zero_init {
            Model::zeros(config.clone())?
        } else {
            Model::seeded(config.clone(), seed)?
        };
        let problem = Problem::sample(config, options.batch, seed);

        let (tape, loss) = record(&model, model.store(), &problem, options.negate_kl_gradient)?;
        model.store_mut().zero_grad();
        tape.backward_into(loss, model.store_mut())?;
        let analytic: Vec<Tensor> = model.store().iter().map(|p| p.grad.clone()).collect();

        let mut store = model.store().clone();
        let numeric = finite_difference_gradient(
            |s| {
                let (tape, loss) = record(&model, s, &problem, false).expect("shapes checked by the analytic pass");
                tape.scalar(loss)
            },
            &mut store,
            options.step,
        );

        for (name, ids) in model.param_blocks() {
            let (mut rel, mut abs) = (0.0f64, 0.0f64);
            for id in ids {
                let i = id.index();
                for (&a, &n) in analytic[i].data().iter().zip(numeric[i].data()) {
                    rel = rel.max(relative_error(a, n, options.floor));
                    abs = abs.max((a - n).abs());
                }
            }
            match blocks.iter_mut().find(|b| b.block == name) {
                Some(b) => {
                    b.max_relative_error = b.max_relative_error.max(rel);
                    b.max_absolute_error = b.max_absolute_error.max(abs);
                }
                None => blocks.push(BlockError {
                    block: name.to_string(),
                    max_relative_error: rel,
                    max_absolute_error: abs,
                }),
            }
        }
    }
    Ok(GradCheckReport {
        tolerance: options.tolerance,
        trials: options.trials,
        num_params,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::ReconMode;
    use crate::model::ModelKind;

    fn small(kind: ModelKind, lambda_y: f64, mode: ReconMode) -> ModelConfig {
        ModelConfig {
            latent_dim: 4,
            prior_hidden: vec![8],
            encoder_hidden: vec![16],
            decoder_hidden: vec![16],
            y_decoder_hidden: vec![8],
            recon_mode: mode,
            lambda_y,
            ..ModelConfig::desk(kind, 16, 4)
        }
    }

    #[test]
    fn seeded_models_pass() {
        for (kind, lambda) in [(ModelKind::Cmma, 0.0), (ModelKind::Cmma, 1.0), (ModelKind::Cvae, 0.0)] {
            for mode in [ReconMode::Exact, ReconMode::Paper] {
                let opts = GradCheckOptions { trials: 2, ..Default::default() };
                let r = grad_check(&small(kind, lambda, mode), &opts).unwrap();
                assert!(r.passed(), "{kind} λ={lambda} {mode:?}: {r:?}");
            }
        }
    }

    #[test]
    fn zero_initialized_model_passes_tightly() {
        let opts = GradCheckOptions {
            tolerance: 1e-6,
            trials: 1,
            zero_init: true,
            ..Default::default()
        };
        let r = grad_check(&small(ModelKind::Cmma, 1.0, ReconMode::Exact), &opts).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn reports_every_block() {
        let opts = GradCheckOptions { trials: 1, ..Default::default() };
        let r = grad_check(&small(ModelKind::Cmma, 1.0, ReconMode::Exact), &opts).unwrap();
        let names: Vec<_> = r.blocks.iter().map(|b| b.block.as_str()).collect();
        assert_eq!(names, ["f", "h", "g", "h2"]);
    }

    #[test]
    fn negated_kl_gradient_is_caught() {
        let opts = GradCheckOptions {
            trials: 1,
            negate_kl_gradient: true,
            ..Default::default()
        };
        let r = grad_check(&small(ModelKind::Cmma, 0.0, ReconMode::Exact), &opts).unwrap();
        assert!(!r.passed());
        let f = r.blocks.iter().find(|b| b.block == "f").unwrap();
        assert!(f.max_relative_error > 0.5);
    }

    #[test]
    fn oversized_models_rejected() {
        let config = ModelConfig::desk(ModelKind::Cmma, 256, 8);
        assert!(matches!(
            grad_check(&config, &GradCheckOptions::default()),
            Err(TrainError::TooManyParameters { .. })
        ));
    }
}
