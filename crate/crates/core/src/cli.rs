//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! or validation error.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use crate::data::{self, GlyphConfig, MultimodalDataset, Split, NUM_ATTRIBUTES};
use crate::eval::{self, EvalSummary, ParzenConfig};
use crate::gaussian::{ReconMode, Rng};
use crate::model::{Model, ModelConfig, ModelKind};
use crate::ndgrad::Tensor;
use crate::train::{self, Checkpoint, GradCheckOptions, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cmma", version, about = "Conditional multimodal autoencoder toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic glyph dataset.
    GenData(GenDataArgs),
    /// Train a CMMA or CVAE.
    Train(TrainArgs),
    /// Mean variational bound on a split.
    EvalBound(EvalBoundArgs),
    /// Conditional Parzen-window log-likelihood with σ chosen on validation.
    EvalParzen(EvalParzenArgs),
    /// Compare the bound against the quadrature log-likelihood (J ≤ 2).
    EvalOracle(EvalOracleArgs),
    /// Decode an image from an attribute vector.
    Generate(GenerateArgs),
    /// Edit an image's attributes by latent arithmetic.
    Modify(ModifyArgs),
    /// Predict attributes from an image.
    InferAttrs(InferArgs),
    /// Export prior and posterior latent statistics as CSV.
    LatentMap(LatentMapArgs),
    /// Score generated or modified images with the attribute oracle.
    AttrMatch(AttrMatchArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

/// Comma-separated attribute bits.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Bits(pub Vec<f64>);

fn parse_bits(s: &str) -> Result<Bits, String> {
    let bits = s
        .split(',')
        .map(|t| match t.trim() {
            "0" => Ok(0.0),
            "1" => Ok(1.0),
            other => Err(format!("attribute {other:?} is not 0 or 1")),
        })
        .collect::<Result<Vec<f64>, String>>()?;
    if bits.len() != NUM_ATTRIBUTES {
        return Err(format!("expected {NUM_ATTRIBUTES} comma-separated bits, got {}", bits.len()));
    }
    Ok(Bits(bits))
}

/// Comma-separated layer widths; `none` for no hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Widths(pub Vec<usize>);

fn parse_widths(s: &str) -> Result<Widths, String> {
    if s == "none" || s.is_empty() {
        return Ok(Widths(vec![]));
    }
    s.split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("{t:?} is not a positive width")),
            Ok(w) => Ok(w),
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Widths)
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 16)]
    pub side: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ArchArgs {
    #[arg(long, default_value_t = ModelKind::Cmma)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 8)]
    pub latent_dim: usize,
    #[arg(long, value_parser = parse_widths, default_value = "64")]
    pub prior_hidden: Widths,
    #[arg(long, value_parser = parse_widths, default_value = "256,64")]
    pub encoder_hidden: Widths,
    #[arg(long, value_parser = parse_widths, default_value = "64,256")]
    pub decoder_hidden: Widths,
    #[arg(long, value_parser = parse_widths, default_value = "64")]
    pub y_decoder_hidden: Widths,
    #[arg(long, default_value_t = ReconMode::Exact)]
    pub recon_mode: ReconMode,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_y: f64,
    /// Drop `y` from the encoder input.
    #[arg(long)]
    pub encoder_ignores_y: bool,
}

impl ArchArgs {
    fn config(&self, x_dim: usize, y_dim: usize) -> ModelConfig {
        ModelConfig {
            kind: self.model,
            x_dim,
            y_dim,
            latent_dim: self.latent_dim,
            prior_hidden: self.prior_hidden.0.clone(),
            encoder_hidden: self.encoder_hidden.0.clone(),
            decoder_hidden: self.decoder_hidden.0.clone(),
            y_decoder_hidden: self.y_decoder_hidden.0.clone(),
            encoder_uses_y: !self.encoder_ignores_y,
            recon_mode: self.recon_mode,
            lambda_y: self.lambda_y,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub damping: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the best-validation snapshot here.
    #[arg(long)]
    pub best_out: Option<PathBuf>,
    /// Per-epoch metrics as CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalBoundArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = Split::Test)]
    pub split: Split,
    /// Noise seed; defaults to the training seed + 1.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalParzenArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.01)]
    pub sigma_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_max: f64,
    #[arg(long, default_value_t = 20)]
    pub sigma_count: usize,
    /// Sampling seed; defaults to the training seed + 1.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalOracleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = Split::Test)]
    pub split: Split,
    /// Instances to check, from the start of the split.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Gauss–Hermite nodes per latent dimension.
    #[arg(long, default_value_t = 128)]
    pub nodes: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_parser = parse_bits)]
    pub attrs: Bits,
    /// Draw the latent from the prior instead of using its mean.
    #[arg(long)]
    pub sample: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ModifyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_parser = parse_bits)]
    pub attrs_old: Bits,
    #[arg(long, value_parser = parse_bits)]
    pub attrs_new: Bits,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct LatentMapArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AttrMatchArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = eval::MatchMode::Generate)]
    pub mode: eval::MatchMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 16)]
    pub x_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub y_dim: usize,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub zero_init: bool,
    /// Corrupt the KL gradient to demonstrate that the check can fail.
    #[arg(long)]
    pub negate_kl: bool,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            if code == EXIT_USAGE {
                if let Some(sub) = subcommand_of(&argv) {
                    let mut cmd = Cli::command();
                    if let Some(sc) = cmd.find_subcommand_mut(&sub) {
                        eprintln!("\n{}", sc.render_help());
                    }
                }
            }
            return code;
        }
    };
    match serde_json::to_string(&cli.command) {
        Ok(json) => println!("{json}"),
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    }
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn subcommand_of(argv: &[std::ffi::OsString]) -> Option<String> {
    let cmd = Cli::command();
    argv.iter().skip(1).filter_map(|a| a.to_str()).find_map(|a| {
        cmd.get_subcommands()
            .find(|s| s.get_name() == a)
            .map(|s| s.get_name().to_string())
    })
}

fn load_data(path: &Path) -> Result<MultimodalDataset> {
    data::load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<(Checkpoint, Model)> {
    let c = train::load_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let m = c.model()?;
    Ok((c, m))
}

fn side_of(model: &Model) -> Result<usize> {
    let m = model.config().x_dim;
    let s = (m as f64).sqrt().round() as usize;
    if s * s != m {
        bail!("model images have {m} pixels, which is not a square");
    }
    Ok(s)
}

fn read_image(path: &Path, model: &Model) -> Result<Tensor> {
    let (w, h, px) = data::read_pgm(path).with_context(|| format!("reading image {}", path.display()))?;
    if w * h != model.config().x_dim {
        bail!("image is {w}x{h} but the model expects {} pixels", model.config().x_dim);
    }
    Ok(Tensor::matrix(1, px.len(), px)?)
}

fn write_image(path: &Path, model: &Model, img: &Tensor) -> Result<()> {
    let s = side_of(model)?;
    data::write_pgm(path, s, s, img.data()).with_context(|| format!("writing image {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn row(bits: &Bits) -> Tensor {
    Tensor::matrix(1, bits.0.len(), bits.0.clone()).expect("one row")
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => {
            let config = GlyphConfig {
                side: a.side,
                noise: a.noise,
                seed: a.seed,
            };
            let d = data::generate_dataset(a.n, &config)?;
            data::save_dataset(&d, &a.out)?;
        }
        Command::Train(a) => {
            let d = load_data(&a.data)?;
            let config = TrainConfig {
                model: a.arch.config(d.x_dim(), d.y_dim()),
                epochs: a.epochs,
                batch_size: a.batch,
                learning_rate: a.lr,
                damping: a.damping,
                seed: a.seed,
            };
            println!("{}", serde_json::to_string(&config)?);
            let out = train::train_with(&d, &config, |m| {
                let val = m.validation.map_or(f64::NAN, |v| v.bound);
                eprintln!("epoch {} train_bound {:.4} val_bound {:.4}", m.epoch, m.train_bound, val);
            })?;
            train::save_checkpoint(&out.checkpoint, &a.out)?;
            if let (Some(path), Some(best)) = (&a.best_out, &out.best) {
                train::save_checkpoint(best, path)?;
            }
            if let Some(path) = &a.log {
                let mut csv = String::from("epoch,train_bound,val_recon,val_kl,val_bound\n");
                for m in out.history() {
                    let v = m.validation.unwrap_or_default();
                    csv += &format!("{},{},{},{},{}\n", m.epoch, m.train_bound, v.recon, v.kl, v.bound);
                }
                std::fs::write(path, csv)?;
            }
        }
        Command::EvalBound(a) => {
            let (c, model) = load_model(&a.ckpt)?;
            let d = load_data(&a.data)?;
            let seed = a.seed.unwrap_or(c.config.eval_seed());
            let b = eval::test_bound(&model, &d, a.split, seed)?;
            let summary = EvalSummary {
                model: model.kind().to_string(),
                split: a.split,
                bound: Some(b.into()),
                parzen: None,
                seeds: eval::Seeds {
                    train: c.config.seed,
                    eval: seed,
                },
            };
            write_json(a.out.as_deref(), &summary)?;
        }
        Command::EvalParzen(a) => {
            let (c, model) = load_model(&a.ckpt)?;
            let d = load_data(&a.data)?;
            let seed = a.seed.unwrap_or(c.config.eval_seed());
            let config = ParzenConfig {
                samples: a.samples,
                sigmas: ParzenConfig::log_grid(a.sigma_min, a.sigma_max, a.sigma_count.max(1)),
                seed,
            };
            let p = eval::parzen_eval_model(&model, &d, &config)?;
            let b = eval::test_bound(&model, &d, Split::Test, seed)?;
            let summary = EvalSummary {
                model: model.kind().to_string(),
                split: Split::Test,
                bound: Some(b.into()),
                parzen: Some(eval::ParzenSummary {
                    sigma: p.sigma,
                    mean_ll: p.test_mean_ll,
                }),
                seeds: eval::Seeds {
                    train: c.config.seed,
                    eval: seed,
                },
            };
            write_json(a.out.as_deref(), &summary)?;
        }
        Command::EvalOracle(a) => {
            let (_, model) = load_model(&a.ckpt)?;
            let d = load_data(&a.data)?;
            eval::check_dims(&model, &d)?;
            let report = oracle_report(&model, &d, a.split, a.count, a.nodes)?;
            write_json(a.out.as_deref(), &report)?;
            if report.violations > 0 {
                bail!("{} of {} instances violate bound ≤ log-likelihood", report.violations, report.count);
            }
        }
        Command::Generate(a) => {
            let (_, model) = load_model(&a.ckpt)?;
            let y = row(&a.attrs);
            let eps = a
                .sample
                .then(|| Rng::new(a.seed).normal_tensor(&[1, model.latent_dim()]));
            let img = model.generate_from_attributes(&y, eps.as_ref())?;
            write_image(&a.out, &model, &img)?;
        }
        Command::Modify(a) => {
            let (_, model) = load_model(&a.ckpt)?;
            let x = read_image(&a.image, &model)?;
            let img = model.modify(&x, &row(&a.attrs_old), &row(&a.attrs_new))?;
            write_image(&a.out, &model, &img)?;
        }
        Command::InferAttrs(a) => {
            let (_, model) = load_model(&a.ckpt)?;
            let x = read_image(&a.image, &model)?;
            let inf = model.infer_attributes(&x)?;
            #[derive(Serialize)]
            struct Inferred {
                scores: Vec<f64>,
                bits: Vec<u8>,
            }
            let report = Inferred {
                scores: inf.scores.data().to_vec(),
                bits: inf.bits.data().iter().map(|&b| b as u8).collect(),
            };
            write_json(a.out.as_deref(), &report)?;
        }
        Command::LatentMap(a) => {
            let (_, model) = load_model(&a.ckpt)?;
            let d = load_data(&a.data)?;
            let rows = eval::latent_map(&model, &d, a.split)?;
            eval::write_latent_csv(&rows, &a.out)?;
            let (prior, posterior) = eval::mean_stds(&rows);
            println!(
                "{}",
                serde_json::json!({"rows": rows.len(), "mean_prior_std": prior, "mean_posterior_std": posterior})
            );
        }
        Command::AttrMatch(a) => {
            let (_, model) = load_model(&a.ckpt)?;
            let d = load_data(&a.data)?;
            let csv = match a.mode {
                eval::MatchMode::Generate => {
                    let ys = d.y.select_rows(&d.test)?;
                    eval::generation_accuracy(&model, &ys)?.to_csv()
                }
                eval::MatchMode::Modify => {
                    let bits: Vec<usize> = (0..d.y_dim()).collect();
                    eval::modification_scores(&model, &d, &d.test, &bits)?.to_csv()
                }
            };
            std::fs::write(&a.out, csv).with_context(|| format!("writing {}", a.out.display()))?;
        }
        Command::Gradcheck(a) => {
            let config = a.arch.config(a.x_dim, a.y_dim);
            let opts = GradCheckOptions {
                tolerance: a.tolerance,
                trials: a.trials,
                seed: a.seed,
                zero_init: a.zero_init,
                negate_kl_gradient: a.negate_kl,
                ..Default::default()
            };
            let report = train::grad_check(&config, &opts)?;
            write_json(None, &report)?;
            if !report.passed() {
                bail!(
                    "max relative error {:e} exceeds tolerance {:e}",
                    report.max_relative_error(),
                    report.tolerance
                );
            }
        }
    }
    Ok(())
}

/// Per-instance comparison of the expected bound with the quadrature
/// log-likelihood.
#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub count: usize,
    pub nodes: usize,
    pub violations: usize,
    pub max_bound_minus_loglik: f64,
    pub mean_gap: f64,
    pub instances: Vec<OracleInstance>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleInstance {
    pub index: usize,
    pub bound: f64,
    pub loglik: f64,
}

/// Tolerance on `bound ≤ log p(x | y)`.
pub const ORACLE_SLACK: f64 = 1e-3;

pub fn oracle_report(
    model: &Model,
    d: &MultimodalDataset,
    split: Split,
    count: usize,
    nodes: usize,
) -> Result<OracleReport, eval::EvalError> {
    let idx: Vec<usize> = d.split(split).iter().copied().take(count).collect();
    if idx.is_empty() {
        return Err(eval::EvalError::EmptySplit(split));
    }
    let mut instances = Vec::with_capacity(idx.len());
    for &i in &idx {
        let (x, y) = (d.x.row(i), d.y.row(i));
        let loglik = eval::quadrature_loglik(model, x, y, nodes)?;
        let bound = eval::expected_bound(model, x, y, eval::MIN_QUADRATURE_NODES.max(nodes / 4))?.bound;
        instances.push(OracleInstance { index: i, bound, loglik });
    }
    let diffs: Vec<f64> = instances.iter().map(|o| o.bound - o.loglik).collect();
    Ok(OracleReport {
        count: instances.len(),
        nodes,
        violations: diffs.iter().filter(|&&d| d > ORACLE_SLACK).count(),
        max_bound_minus_loglik: diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_gap: -diffs.iter().sum::<f64>() / diffs.len() as f64,
        instances,
    })
}
