use hqgan::data::{synthetic_shapes_dataset, Dataset, ShapeClass};
use hqgan::discriminator::*;
use hqgan::generator::*;
use hqgan::metrics::*;
use hqgan::nn::{self, Mode};
use hqgan::rng::{self, Rng};
use hqgan::tensor::{self, bce_with_logits, no_grad, Adam, AdamConfig};
use hqgan::trainer::*;
use hqgan::transfer::{Classifier, PretrainConfig, pretrain_classifier};
use hqgan::{Result, Tensor};

fn backbone_config() -> BackboneConfig {
    BackboneConfig::reduced([4, 4, 8, 8, 8], 8)
}

fn generator(kind: BlockKind, seed: u64) -> Generator {
    let cfg = GeneratorConfig { block_kind: kind, base_channels: 8, output_size: 8, ..Default::default() };
    Generator::new(cfg, &mut rng::seeded(seed, rng::stream::GENERATOR_INIT)).unwrap()
}

fn discriminator(kind: HeadKind, seed: u64) -> Discriminator {
    let mut r = rng::seeded(seed, rng::stream::DISCRIMINATOR_INIT);
    let b = Backbone::new(backbone_config(), &mut r).unwrap();
    Discriminator::new(b, HeadConfig { kind, n_qubits: 5 }, &mut r).unwrap()
}

fn shapes(n: usize, seed: u64) -> Dataset {
    synthetic_shapes_dataset(n, 8, &[ShapeClass::Disc, ShapeClass::Square], seed).unwrap()
}

fn no_hook() -> impl FnMut(usize, &Generator) -> Result<()> {
    |_, _| Ok(())
}

#[test]
fn one_epoch_of_64_images_is_8_steps() {
    let config = TrainConfig { epochs: 1, seed: 1, ..Default::default() };
    let (log, _) = train(
        &config,
        generator(BlockKind::Classical, 1),
        discriminator(HeadKind::Classical, 1),
        &shapes(32, 1),
        None,
        &mut no_hook(),
    )
    .unwrap();
    assert_eq!(log.steps.len(), 8);
    assert_eq!(log.steps.iter().map(|s| s.step).collect::<Vec<_>>(), (1..=8).collect::<Vec<_>>());
    assert!(log.steps.iter().all(|s| s.epoch == 1 && s.d_loss.is_finite() && s.g_loss.is_finite()));
    assert_eq!(log.epoch_seconds.len(), 1);
}

#[test]
fn fixed_seed_reproduces_the_first_ten_steps_bit_for_bit() {
    let run = |seed: u64| {
        let config = TrainConfig { epochs: 2, seed, ..Default::default() };
        let (log, _) = train(
            &config,
            generator(BlockKind::Quantum, seed),
            discriminator(HeadKind::Hybrid, seed),
            &shapes(24, 2),
            None,
            &mut no_hook(),
        )
        .unwrap();
        log.steps[..10].iter().map(|s| (s.d_loss.to_bits(), s.g_loss.to_bits())).collect::<Vec<_>>()
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

#[test]
fn step_matches_a_two_phase_reference() {
    let real = shapes(4, 3).to_batch().images;
    let cfg = AdamConfig::default();
    let mut gan = Gan::new(
        generator(BlockKind::Quantum, 6),
        discriminator(HeadKind::Hybrid, 6),
        cfg,
        LatentDistribution::Uniform,
    )
    .unwrap();
    let losses = train_step(&mut gan, &real, &mut rng::seeded(6, rng::stream::LATENT)).unwrap();

    // same initial weights, updated by hand
    let (g, d) = (generator(BlockKind::Quantum, 6), discriminator(HeadKind::Hybrid, 6));
    let (gp, dp) = (nn::parameters(&g), nn::parameters(&d));
    let (mut g_opt, mut d_opt) = (Adam::new(&gp, cfg).unwrap(), Adam::new(&dp, cfg).unwrap());
    let mut z_rng: Rng = rng::seeded(6, rng::stream::LATENT);
    let n = real.shape()[0];

    let z = sample_latent(LatentDistribution::Uniform, n, 5, &mut z_rng);
    let fake = no_grad(|| g.forward(&z, Mode::Train)).unwrap();
    let lr = bce_with_logits(&d.forward(&real, Mode::Train).unwrap(), &vec![1.0; n]).unwrap();
    let lf = bce_with_logits(&d.forward(&fake, Mode::Train).unwrap(), &vec![0.0; n]).unwrap();
    let d_loss = tensor::add(&lr, &lf).unwrap();
    d_loss.backward().unwrap();
    d_opt.step(&dp).unwrap();
    let d_after: Vec<Vec<f64>> = dp.iter().map(Tensor::to_vec).collect();

    gp.iter().chain(&dp).for_each(Tensor::zero_grad);
    let z = sample_latent(LatentDistribution::Uniform, n, 5, &mut z_rng);
    let logits = d.forward(&g.forward(&z, Mode::Train).unwrap(), Mode::Train).unwrap();
    let g_loss = bce_with_logits(&logits, &vec![1.0; n]).unwrap();
    g_loss.backward().unwrap();
    g_opt.step(&gp).unwrap();

    assert_eq!(losses.d_loss, d_loss.item());
    assert_eq!(losses.g_loss, g_loss.item());
    for (a, b) in gan.generator_parameters().iter().zip(&gp) {
        assert_eq!(a.to_vec(), b.to_vec());
    }
    // the generator step leaves discriminator weights where its own step put them
    for (a, b) in gan.discriminator_parameters().iter().zip(&d_after) {
        assert_eq!(&a.to_vec(), b);
    }
    assert!(gan.discriminator_parameters().iter().any(|p| p.grad().is_some_and(|g| g.iter().any(|&v| v != 0.0))));
}

fn extractor(seed: u64) -> BackboneExtractor {
    let ds = shapes(16, 40 + seed);
    let (model, _): (Classifier, _) =
        pretrain_classifier(&ds, 2, 1, &PretrainConfig::new(backbone_config(), seed)).unwrap();
    BackboneExtractor::new(model)
}

struct Replay(Tensor);

impl ImageSource for Replay {
    fn generate(&self, count: usize, _: &mut Rng) -> Result<Tensor> {
        let s = self.0.shape();
        let per = s[1] * s[2] * s[3];
        Tensor::new(&[count, s[1], s[2], s[3]], self.0.data()[..count * per].to_vec())
    }
}

#[test]
fn replaying_held_out_images_scores_zero_distance() {
    let ex = extractor(1);
    let held_out = shapes(20, 9);
    let ctx = EvalContext::new(&ex, &held_out, None, 1, 0).unwrap();
    assert_eq!(ctx.n_gen, 40);
    let report = evaluate_epoch(&Replay(held_out.to_batch().images), &ctx).unwrap();
    assert!(report.fid.abs() < 1e-8, "fid {}", report.fid);
    // the unbiased estimator keeps the diagonal only in the cross term, so
    // identical sets land near zero rather than on it
    assert!(report.kid.abs() < 1e-8, "kid {}", report.kid);
    assert_eq!(report.extractor_id, ex.id());
}

#[test]
fn constant_images_have_unit_inception_score() {
    let ex = extractor(2);
    let ctx = EvalContext::new(&ex, &shapes(10, 10), Some(12), 3, 0).unwrap();
    let one = shapes(1, 11).to_batch().images.to_vec();
    let same = Tensor::new(&[12, 3, 8, 8], one.iter().cycle().take(12 * 192).copied().collect()).unwrap();
    let report = evaluate_epoch(&Replay(same), &ctx).unwrap();
    assert!((report.is_mean - 1.0).abs() < 1e-12, "{}", report.is_mean);
    assert!(report.is_std.abs() < 1e-12);
}

#[test]
fn evaluation_equals_standalone_metric_calls() {
    let ex = extractor(3);
    let held_out = shapes(12, 12);
    let ctx = EvalContext::new(&ex, &held_out, Some(16), 2, 21).unwrap();
    let g = generator(BlockKind::Quantum, 3);
    let report = evaluate_epoch(&g, &ctx).unwrap();

    let real = extract_features(&held_out.to_batch().images, &ex, FeatureSource::Real).unwrap();
    let images = no_grad(|| g.generate(16, &mut rng::seeded(21, rng::stream::EVAL_LATENT), Mode::Eval)).unwrap();
    let gen = extract_features(&images, &ex, FeatureSource::Generated).unwrap();
    let (is_mean, is_std) = inception_score(&ex.class_probabilities(&images).unwrap(), 2).unwrap();
    assert_eq!(report.fid, fid(&real, &gen).unwrap());
    assert_eq!(report.kid, kid(&real, &gen).unwrap());
    assert_eq!((report.is_mean, report.is_std), (is_mean, is_std));
    assert_eq!(report.n_eval, 16);
}

#[test]
fn training_logs_scheduled_evaluations_and_calls_the_hook() {
    let ex = extractor(4);
    let held_out = shapes(8, 13);
    let ctx = EvalContext::new(&ex, &held_out, None, 1, 0).unwrap();
    let config = TrainConfig { epochs: 3, metric_every: 2, seed: 8, ..Default::default() };
    let mut seen = Vec::new();
    let (log, _) = train(
        &config,
        generator(BlockKind::Classical, 8),
        discriminator(HeadKind::Classical, 8),
        &shapes(8, 14),
        Some(&ctx),
        &mut |epoch, _: &Generator| {
            seen.push(epoch);
            Ok(())
        },
    )
    .unwrap();
    let epochs: Vec<usize> = log.evaluations.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, [0, 2, 3]);
    assert_eq!(seen, [0, 2, 3]);
    assert!(log.evaluations.iter().all(|e| e.report.fid.is_finite() && e.report.fid >= 0.0));
}
