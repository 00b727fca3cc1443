use cmma::data::{
    all_attribute_vectors, attribute_oracle, generate_dataset, load_dataset, render_glyph, save_dataset, GlyphConfig,
};
use cmma::gaussian::{gaussian_log_density, kl_diag, reparam_sample, ReconMode, Rng};
use cmma::model::{BoundNoise, Model, ModelConfig, ModelKind};
use cmma::ndgrad::Tensor;
use cmma::train::{train, TrainConfig};
use proptest::prelude::*;

fn small(kind: ModelKind, lambda_y: f64, recon_mode: ReconMode) -> ModelConfig {
    ModelConfig {
        kind,
        x_dim: 9,
        y_dim: 3,
        latent_dim: 2,
        prior_hidden: vec![5],
        encoder_hidden: vec![6],
        decoder_hidden: vec![7],
        y_decoder_hidden: vec![4],
        encoder_uses_y: true,
        recon_mode,
        lambda_y,
    }
}

fn kinds() -> impl Strategy<Value = (ModelKind, f64, ReconMode)> {
    (
        prop_oneof![Just(ModelKind::Cmma), Just(ModelKind::Cvae)],
        prop_oneof![Just(0.0), Just(1.0), Just(0.3)],
        prop_oneof![Just(ReconMode::Exact), Just(ReconMode::Paper)],
    )
        .prop_filter("attribute term is CMMA only", |(k, l, _)| *k == ModelKind::Cmma || *l == 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bound_terms_recompute_independently(
        (kind, lambda_y, mode) in kinds(),
        seed in 0u64..1000,
        x in prop::collection::vec(0.0..1.0f64, 9),
        bits in prop::collection::vec(0u8..2, 3),
        e in prop::collection::vec(-2.0..2.0f64, 4),
    ) {
        let model = Model::seeded(small(kind, lambda_y, mode), seed).unwrap();
        let x = Tensor::matrix(1, 9, x).unwrap();
        let y = Tensor::matrix(1, 3, bits.iter().map(|&b| b as f64).collect()).unwrap();
        let noise = BoundNoise {
            latent: Tensor::matrix(1, 2, e[..2].to_vec()).unwrap(),
            prior: Some(Tensor::matrix(1, 2, e[2..].to_vec()).unwrap()),
        };
        let b = model.bound(&x, &y, &noise).unwrap()[0];

        let q = model.encoder(&x, &y).unwrap();
        let p = model.prior_net(&y).unwrap();
        let z = reparam_sample(&q, &noise.latent).unwrap();
        let recon = gaussian_log_density(&x, &model.decoder(&z, &y).unwrap(), mode).unwrap();
        let kl = kl_diag(&q, &p).unwrap();
        prop_assert!((b.recon - recon).abs() <= 1e-12 * recon.abs().max(1.0));
        prop_assert!((b.kl - kl).abs() <= 1e-12 * kl.max(1.0));
        prop_assert!(b.kl >= 0.0);
        let y_term = if lambda_y > 0.0 {
            let zp = reparam_sample(&p, noise.prior.as_ref().unwrap()).unwrap();
            gaussian_log_density(&y, &model.y_decoder(&zp).unwrap(), ReconMode::Exact).unwrap()
        } else {
            0.0
        };
        prop_assert!((b.y_term - y_term).abs() <= 1e-12 * y_term.abs().max(1.0));
        let total = b.recon - b.kl + lambda_y * b.y_term;
        prop_assert!((b.bound - total).abs() <= 1e-12 * total.abs().max(1.0));
    }

    #[test]
    fn zero_model_has_zero_kl((kind, lambda_y, mode) in kinds(), x in prop::collection::vec(0.0..1.0f64, 9)) {
        let model = Model::zeros(small(kind, lambda_y, mode)).unwrap();
        let x = Tensor::matrix(1, 9, x).unwrap();
        let y = Tensor::matrix(1, 3, vec![1.0, 0.0, 1.0]).unwrap();
        let mut rng = Rng::new(0);
        let b = model.bound(&x, &y, &BoundNoise::sample(&mut rng, 1, 2)).unwrap()[0];
        prop_assert_eq!(b.kl, 0.0);
    }

    #[test]
    fn modify_without_change_is_reconstruction((kind, lambda_y, mode) in kinds(), seed in 0u64..1000,
        x in prop::collection::vec(0.0..1.0f64, 18), bits in prop::collection::vec(0u8..2, 6)) {
        let model = Model::seeded(small(kind, lambda_y, mode), seed).unwrap();
        let x = Tensor::matrix(2, 9, x).unwrap();
        let y = Tensor::matrix(2, 3, bits.iter().map(|&b| b as f64).collect()).unwrap();
        let a = model.modify(&x, &y, &y).unwrap();
        let b = model.reconstruct(&x, &y).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn renders_stay_in_unit_range(bits in prop::collection::vec(0u8..2, 8), seed in 0u64..1000, side in 8usize..20) {
        let y: Vec<f64> = bits.iter().map(|&b| b as f64).collect();
        let mut rng = Rng::new(seed);
        let img = render_glyph(&y, side, Some((0.49, &mut rng))).unwrap();
        prop_assert_eq!(img.len(), side * side);
        prop_assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn splits_partition_the_dataset(n in 10usize..120, seed in 0u64..100) {
        let d = generate_dataset(n, &GlyphConfig { side: 8, noise: 0.05, seed }).unwrap();
        let mut all: Vec<usize> = d.train.iter().chain(&d.validation).chain(&d.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn oracle_reads_every_noiseless_render() {
    for side in 14..=40 {
        for y in all_attribute_vectors() {
            let img = render_glyph(&y, side, None).unwrap();
            assert_eq!(attribute_oracle(&img, side).bits_f64(), y, "side {side}");
        }
    }
}

#[test]
fn dataset_generation_and_round_trip_are_exact() {
    let config = GlyphConfig { side: 8, ..Default::default() };
    let a = generate_dataset(60, &config).unwrap();
    assert_eq!(a, generate_dataset(60, &config).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    save_dataset(&a, &path).unwrap();
    let b = load_dataset(&path).unwrap();
    assert!(a.x.data().iter().zip(b.x.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert_eq!(a, b);
}

#[test]
fn recon_estimate_converges_on_trained_model() {
    let d = generate_dataset(200, &GlyphConfig { side: 8, ..Default::default() }).unwrap();
    let mut c = ModelConfig::desk(ModelKind::Cmma, 64, 8);
    c.latent_dim = 2;
    c.encoder_hidden = vec![32];
    c.decoder_hidden = vec![32];
    let out = train(&d, &TrainConfig::new(c, 5, 3)).unwrap();
    let model = out.checkpoint.model().unwrap();
    let i = d.test[0];
    let n = 10_000;
    let x = Tensor::matrix(n, 64, d.x.row(i).repeat(n)).unwrap();
    let y = Tensor::matrix(n, 8, d.y.row(i).repeat(n)).unwrap();
    let mut rng = Rng::new(1);
    let recon: Vec<f64> = model
        .bound(&x, &y, &BoundNoise::sample(&mut rng, n, 2))
        .unwrap()
        .iter()
        .map(|b| b.recon)
        .collect();
    let mean = recon.iter().sum::<f64>() / n as f64;
    let var = recon.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!(se < 0.01 * mean.abs(), "se {se}, mean {mean}");
}
