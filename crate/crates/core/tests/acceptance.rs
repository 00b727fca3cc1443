//! End-to-end acceptance suite, A1 through A10.
//!
//! Runs as a plain binary so the criteria execute one after another and
//! the timings are not skewed by sibling tests. Every criterion prints one
//! `PASS` or `FAIL` line. A failing criterion is reported, not hidden; set
//! `CMMA_ACCEPTANCE_STRICT=1` to turn any `FAIL` into a non-zero exit.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use cmma::data::{
    all_attribute_vectors, attribute_oracle, generate_dataset, load_dataset, render_glyph, save_dataset, GlyphConfig,
    MultimodalDataset, Split, COLUMN, INTENSITY, ROW, SIZE,
};
use cmma::eval::{
    expected_bound, generation_accuracy, latent_map, mean_stds, modification_scores, parzen_eval_model,
    quadrature_loglik, test_bound, write_latent_csv, ParzenConfig,
};
use cmma::gaussian::{kl_diag, log_density_rows, reparam, GaussianDiag, GaussianVar, ReconMode, Rng};
use cmma::model::{Model, ModelConfig, ModelKind};
use cmma::ndgrad::{Tape, Tensor};
use cmma::train::{grad_check, load_checkpoint, save_checkpoint, train, Checkpoint, GradCheckOptions, TrainConfig};
use common::{closed_form, linear_toy};
use serde_json::json;

const GEOMETRIC: [usize; 4] = [SIZE, COLUMN, ROW, INTENSITY];
const DESK_N: usize = 2000;
const DESK_EPOCHS: usize = 200;
const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

struct Report {
    id: &'static str,
    title: &'static str,
    limit: Duration,
    elapsed: Duration,
    outcome: Outcome,
}

impl Report {
    fn passed(&self) -> bool {
        self.outcome.passed && self.elapsed <= self.limit
    }

    fn line(&self) -> String {
        let timing = if self.elapsed <= self.limit {
            format!("{:.1}s", self.elapsed.as_secs_f64())
        } else {
            format!("{:.1}s over the {}s limit", self.elapsed.as_secs_f64(), self.limit.as_secs())
        };
        format!(
            "{} {} {}: {} [{}]",
            self.id,
            if self.passed() { "PASS" } else { "FAIL" },
            self.title,
            self.outcome.detail,
            timing
        )
    }
}

fn run(id: &'static str, title: &'static str, limit_secs: u64, f: impl FnOnce() -> Outcome) -> Report {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    let report = Report {
        id,
        title,
        limit: Duration::from_secs(limit_secs),
        elapsed: start.elapsed(),
        outcome,
    };
    println!("{}", report.line());
    report
}

fn desk_data() -> MultimodalDataset {
    generate_dataset(DESK_N, &GlyphConfig::default()).unwrap()
}

fn desk_config(kind: ModelKind, lambda_y: f64) -> ModelConfig {
    let mut c = ModelConfig::desk(kind, 256, 8);
    c.lambda_y = lambda_y;
    c
}

fn desk_model(d: &MultimodalDataset, kind: ModelKind, lambda_y: f64, seed: u64) -> Checkpoint {
    let config = TrainConfig::new(desk_config(kind, lambda_y), DESK_EPOCHS, seed);
    train(d, &config).unwrap().checkpoint
}

fn a1() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for mode in [ReconMode::Exact, ReconMode::Paper] {
        for lambda_y in [0.0, 1.0] {
            let config = ModelConfig {
                kind: ModelKind::Cmma,
                x_dim: 16,
                y_dim: 4,
                latent_dim: 4,
                prior_hidden: vec![32],
                encoder_hidden: vec![32],
                decoder_hidden: vec![32],
                y_decoder_hidden: vec![32],
                encoder_uses_y: true,
                recon_mode: mode,
                lambda_y,
            };
            let report = grad_check(&config, &GradCheckOptions { trials: 5, seed: 42, ..Default::default() }).unwrap();
            worst = worst.max(report.max_relative_error());
            runs += report.trials;
        }
    }
    outcome(worst <= 1e-4, format!("max relative error {worst:.2e} over {runs} seeded trials (tolerance 1e-4)"))
}

fn monte_carlo_kl(q: &GaussianDiag, p: &GaussianDiag, n: usize, rng: &mut Rng) -> (f64, f64) {
    let chunk = 100_000;
    let d = q.dim();
    let repeat = |t: &Tensor| Tensor::matrix(chunk, d, t.data().repeat(chunk)).unwrap();
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n / chunk {
        let mut tape = Tape::new();
        let qv = GaussianVar { mean: tape.leaf(repeat(&q.mean)), logvar: tape.leaf(repeat(&q.logvar)) };
        let pv = GaussianVar { mean: tape.leaf(repeat(&p.mean)), logvar: tape.leaf(repeat(&p.logvar)) };
        let eps = tape.leaf(rng.normal_tensor(&[chunk, d]));
        let z = reparam(&mut tape, qv, eps).unwrap();
        let lq = log_density_rows(&mut tape, z, qv, ReconMode::Exact).unwrap();
        let lp = log_density_rows(&mut tape, z, pv, ReconMode::Exact).unwrap();
        let diff = tape.sub(lq, lp).unwrap();
        for &v in tape.value(diff).data() {
            s1 += v;
            s2 += v * v;
        }
    }
    let mean = s1 / n as f64;
    (mean, ((s2 / n as f64 - mean * mean) / n as f64).sqrt())
}

fn a2() -> Outcome {
    let mut rng = Rng::new(2);
    let draw = |rng: &mut Rng, d: usize| {
        let m: Vec<f64> = (0..d).map(|_| 4.0 * rng.uniform() - 2.0).collect();
        let lv: Vec<f64> = (0..d).map(|_| 3.0 * rng.uniform() - 1.5).collect();
        GaussianDiag::new(Tensor::matrix(1, d, m).unwrap(), Tensor::matrix(1, d, lv).unwrap()).unwrap()
    };
    let mut self_kl: f64 = 0.0;
    let mut min_kl = f64::INFINITY;
    for _ in 0..1000 {
        let d = 1 + rng.below(8);
        let (q, p) = (draw(&mut rng, d), draw(&mut rng, d));
        self_kl = self_kl.max(kl_diag(&p, &p).unwrap().abs());
        min_kl = min_kl.min(kl_diag(&q, &p).unwrap());
    }
    let mut worst_z: f64 = 0.0;
    for _ in 0..10 {
        let (q, p) = (draw(&mut rng, 3), draw(&mut rng, 3));
        let exact = kl_diag(&q, &p).unwrap();
        let (mc, se) = monte_carlo_kl(&q, &p, 1_000_000, &mut rng);
        worst_z = worst_z.max((mc - exact).abs() / se);
    }
    outcome(
        self_kl <= 1e-12 && min_kl >= 0.0 && worst_z <= 3.0,
        format!("max |KL(p,p)| {self_kl:.1e}, min KL {min_kl:.3e} over 1000 draws, worst Monte-Carlo deviation {worst_z:.2} s.e."),
    )
}

fn small_latent_model(kind: ModelKind, d: &MultimodalDataset) -> Model {
    let mut c = ModelConfig::desk(kind, 256, 8);
    c.latent_dim = 2;
    train(d, &TrainConfig::new(c, 50, 1)).unwrap().checkpoint.model().unwrap()
}

fn a3(models: &[(ModelKind, Model)], d: &MultimodalDataset) -> Outcome {
    let mut details = Vec::new();
    let mut passed = true;
    for (kind, model) in models {
        let mut violations = 0;
        let mut max_excess = f64::NEG_INFINITY;
        // 500 glyphs leave 50 validation and 50 test points, none seen in training.
        for &i in d.validation.iter().chain(&d.test).take(100) {
            let (x, y) = (d.x.row(i), d.y.row(i));
            let loglik = quadrature_loglik(model, x, y, 128).unwrap();
            let bound = expected_bound(model, x, y, 32).unwrap().bound;
            max_excess = max_excess.max(bound - loglik);
            if bound > loglik + 1e-3 {
                violations += 1;
            }
        }
        let mut rng = Rng::new(17);
        let mut toy_err: f64 = 0.0;
        for seed in 0..5 {
            let toy = linear_toy(*kind, seed, 1.0);
            for _ in 0..10 {
                let y: Vec<f64> = (0..4).map(|_| rng.below(2) as f64).collect();
                let x: Vec<f64> = (0..16).map(|_| 0.5 + rng.normal()).collect();
                let exact = closed_form(&toy, &x, &y).loglik;
                toy_err = toy_err.max((quadrature_loglik(&toy, &x, &y, 128).unwrap() - exact).abs());
            }
        }
        passed &= violations == 0 && toy_err <= 1e-6;
        details.push(format!(
            "{kind}: {violations}/100 held-out violations, max bound − loglik {max_excess:.3}, linear-Gaussian error {toy_err:.1e}"
        ));
    }
    outcome(passed, details.join("; "))
}

fn reconstruction_mse(model: &Model, d: &MultimodalDataset) -> f64 {
    let (x, y) = d.batch(&d.test);
    let r = model.reconstruct(&x, &y).unwrap();
    r.data().iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

fn a4(ckpt: &Checkpoint, d: &MultimodalDataset) -> Outcome {
    let h = &ckpt.metrics.history;
    let (first, last) = (h[0].train_bound, h[h.len() - 1].train_bound);
    let model = ckpt.model().unwrap();
    let mse = reconstruction_mse(&model, d);
    let var = d.pixel_variance();
    outcome(
        last > first && mse < var,
        format!("train bound {first:.2} → {last:.2}; test reconstruction MSE {mse:.4} vs pixel variance {var:.4}"),
    )
}

fn a5(model: &Model) -> Outcome {
    let ys = Tensor::from_rows(&all_attribute_vectors()).unwrap();
    let acc = generation_accuracy(model, &ys).unwrap();
    let names = ["size", "column", "row", "intensity"];
    let parts: Vec<String> = GEOMETRIC.iter().zip(names).map(|(&b, n)| format!("{n} {:.3}", acc.per_bit[b])).collect();
    outcome(
        GEOMETRIC.iter().all(|&b| acc.per_bit[b] >= 0.8),
        format!("oracle accuracy over 256 vectors: {}", parts.join(", ")),
    )
}

fn a6(model: &Model, d: &MultimodalDataset) -> Outcome {
    let idx: Vec<usize> = d.test.iter().copied().take(100).collect();
    let table = modification_scores(model, d, &idx, &[INTENSITY]).unwrap();
    let r = &table.rows[0];
    let (col, row) = (r.preservation[COLUMN].unwrap(), r.preservation[ROW].unwrap());
    let (x, y) = d.batch(&idx);
    let same = model.modify(&x, &y, &y).unwrap();
    let recon = model.reconstruct(&x, &y).unwrap();
    let identical = same.data().iter().zip(recon.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(
        r.flip_success >= 0.8 && col >= 0.8 && row >= 0.8 && identical,
        format!(
            "intensity flipped in {:.2}, column kept {col:.2}, row kept {row:.2}, unchanged-attribute edit {} reconstruction",
            r.flip_success,
            if identical { "bitwise equals" } else { "differs from" }
        ),
    )
}

fn a7(model: &Model, d: &MultimodalDataset) -> Outcome {
    let idx: Vec<usize> = d.test.iter().copied().take(100).collect();
    let renders: Vec<Vec<f64>> = idx.iter().map(|&i| render_glyph(d.y.row(i), 16, None).unwrap()).collect();
    let x = Tensor::from_rows(&renders).unwrap();
    let inferred = model.infer_attributes(&x).unwrap();
    let acc: Vec<f64> = GEOMETRIC
        .iter()
        .map(|&b| {
            let hits = idx.iter().enumerate().filter(|&(r, &i)| inferred.bits.row(r)[b] == d.y.row(i)[b]).count();
            hits as f64 / idx.len() as f64
        })
        .collect();
    outcome(
        acc.iter().all(|&a| a >= 0.8),
        format!("per-bit accuracy size {:.2}, column {:.2}, row {:.2}, intensity {:.2}", acc[0], acc[1], acc[2], acc[3]),
    )
}

fn a8(models: &[(ModelKind, u64, Model)], d: &MultimodalDataset) -> Outcome {
    let mut rows = Vec::new();
    for (kind, seed, model) in models {
        let eval_seed = seed + 1;
        let b = test_bound(model, d, Split::Test, eval_seed).unwrap();
        let p = parzen_eval_model(model, d, &ParzenConfig::new(eval_seed)).unwrap();
        rows.push((*kind, *seed, b.bound, p.test_mean_ll, p.sigma));
    }
    let mean = |k: ModelKind, f: fn(&(ModelKind, u64, f64, f64, f64)) -> f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.0 == k).map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (cb, vb) = (mean(ModelKind::Cmma, |r| r.2), mean(ModelKind::Cvae, |r| r.2));
    let (cp, vp) = (mean(ModelKind::Cmma, |r| r.3), mean(ModelKind::Cvae, |r| r.3));
    let passed = cb >= vb && cp >= vp;
    let summary = json!({
        "budget": {"n": DESK_N, "epochs": DESK_EPOCHS, "seeds": SEEDS},
        "runs": rows.iter().map(|r| json!({
            "model": r.0.to_string(), "seed": r.1, "test_bound": r.2, "test_parzen": r.3, "sigma": r.4,
        })).collect::<Vec<_>>(),
        "mean": {
            "cmma": {"bound": cb, "parzen": cp},
            "cvae": {"bound": vb, "parzen": vp},
        },
        "cmma_ge_cvae": {"bound": cb >= vb, "parzen": cp >= vp},
        "inequality_failed": !passed,
    });
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("cmma_vs_cvae.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).unwrap()).unwrap();
    outcome(
        passed,
        format!(
            "mean test bound CMMA {cb:.2} vs CVAE {vb:.2}; mean Parzen CMMA {cp:.2} vs CVAE {vp:.2}; summary at {}",
            path.display()
        ),
    )
}

fn a9(model: &Model, d: &MultimodalDataset) -> Outcome {
    let rows = latent_map(model, d, Split::Test).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("latent.csv");
    write_latent_csv(&rows, &path).unwrap();
    let lines = std::fs::read_to_string(&path).unwrap().lines().count() - 1;
    let (prior, post) = mean_stds(&rows);
    outcome(
        post < prior && lines == d.test.len(),
        format!("mean posterior std {post:.4} vs prior {prior:.4}; {lines} CSV rows for {} test instances", d.test.len()),
    )
}

fn a10() -> Outcome {
    let data = generate_dataset(300, &GlyphConfig::default()).unwrap();
    let mut c = ModelConfig::desk(ModelKind::Cmma, 256, 8);
    c.lambda_y = 1.0;
    let config = TrainConfig::new(c, 3, 11);
    let a = train(&data, &config).unwrap().checkpoint.to_json().unwrap();
    let b = train(&data, &config).unwrap().checkpoint.to_json().unwrap();
    let deterministic = a == b;

    let dir = tempfile::tempdir().unwrap();
    let original = Checkpoint::from_json(&a).unwrap();
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&original, &path).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    let bits = |c: &Checkpoint| -> Vec<u64> {
        c.params.iter().flat_map(|p| p.data.iter().map(|v| v.to_bits())).collect()
    };
    let ckpt_exact = reloaded == original && bits(&reloaded) == bits(&original);

    let dpath = dir.path().join("data.bin");
    save_dataset(&data, &dpath).unwrap();
    let loaded = load_dataset(&dpath).unwrap();
    let data_exact = loaded == data
        && loaded.x.data().iter().zip(data.x.data()).all(|(p, q)| p.to_bits() == q.to_bits());

    let qualified = all_attribute_vectors()
        .iter()
        .filter(|y| attribute_oracle(&render_glyph(y, 16, None).unwrap(), 16).bits_f64() == **y)
        .count();
    outcome(
        deterministic && ckpt_exact && data_exact && qualified == 256,
        format!(
            "repeat training {}; checkpoint round trip {}; dataset round trip {}; oracle {qualified}/256 on noiseless renders",
            if deterministic { "bitwise identical" } else { "differs" },
            if ckpt_exact { "exact" } else { "inexact" },
            if data_exact { "exact" } else { "inexact" },
        ),
    )
}

fn main() {
    let mut reports = Vec::new();
    reports.push(run("A1", "gradient fidelity", 60, a1));
    reports.push(run("A2", "KL correctness", 60, a2));

    let small = generate_dataset(500, &GlyphConfig::default()).unwrap();
    let mut j2 = Vec::new();
    reports.push(run("A3", "bound below quadrature likelihood", 600, || {
        j2 = [ModelKind::Cmma, ModelKind::Cvae]
            .into_iter()
            .map(|k| (k, small_latent_model(k, &small)))
            .collect();
        a3(&j2, &small)
    }));

    let d = desk_data();
    let mut cmma1: Option<Checkpoint> = None;
    reports.push(run("A4", "training sanity", 1800, || {
        let ckpt = desk_model(&d, ModelKind::Cmma, 0.0, SEEDS[0]);
        let o = a4(&ckpt, &d);
        cmma1 = Some(ckpt);
        o
    }));
    let model = cmma1.as_ref().map(|c| c.model().unwrap());
    reports.push(run("A5", "conditional generation", 60, || a5(model.as_ref().expect("A4 model"))));
    reports.push(run("A6", "attribute modification", 60, || a6(model.as_ref().expect("A4 model"), &d)));
    reports.push(run("A7", "attribute inference", 1800, || {
        let m = desk_model(&d, ModelKind::Cmma, 1.0, SEEDS[0]).model().unwrap();
        a7(&m, &d)
    }));
    reports.push(run("A8", "CMMA versus CVAE", 5400, || {
        let mut models = vec![(ModelKind::Cmma, SEEDS[0], model.clone().expect("A4 model"))];
        for kind in [ModelKind::Cmma, ModelKind::Cvae] {
            for &seed in &SEEDS {
                if kind == ModelKind::Cmma && seed == SEEDS[0] {
                    continue;
                }
                models.push((kind, seed, desk_model(&d, kind, 0.0, seed).model().unwrap()));
            }
        }
        a8(&models, &d)
    }));
    reports.push(run("A9", "latent geometry", 300, || {
        let cmma = j2.iter().find(|(k, _)| *k == ModelKind::Cmma).map(|(_, m)| m).expect("A3 model");
        a9(cmma, &small)
    }));
    reports.push(run("A10", "determinism and persistence", 60, a10));

    println!("\nacceptance summary");
    for r in &reports {
        println!("{}", r.line());
    }
    let passed = reports.iter().filter(|r| r.passed()).count();
    println!("{passed}/{} criteria pass", reports.len());
    if std::env::var("CMMA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") && passed < reports.len() {
        std::process::exit(1);
    }
}
