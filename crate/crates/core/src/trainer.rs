//! Adversarial training: one discriminator step, then one generator step per
//! batch, with BCE-with-logits losses and separate Adam optimizers.

use std::fmt;
use std::time::Instant;

use crate::data::{batch_iter, Dataset};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{Generator, LatentDistribution};
use crate::metrics::{self, extract_features, FeatureExtractor, FeatureSet, FeatureSource, MetricReport};
use crate::nn::{self, Mode, Module};
use crate::rng::{self, Rng};
use crate::tensor::{bce_with_logits, no_grad, Adam, AdamConfig, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs between metric evaluations; 0 evaluates only before training
    /// and after the last epoch.
    pub metric_every: usize,
    pub seed: u64,
    pub latent: LatentDistribution,
    /// Generated images per evaluation; `None` matches the real held-out count.
    pub n_eval: Option<usize>,
    pub is_splits: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamConfig::default(),
            batch_size: 8,
            epochs: 100,
            metric_every: 10,
            seed: 0,
            latent: LatentDistribution::Uniform,
            n_eval: None,
            is_splits: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) || !(o.epsilon > 0.0) {
            return Err(Error::Config("learning_rate and epsilon must be positive".into()));
        }
        if !(o.beta1 > 0.0 && o.beta1 < 1.0 && o.beta2 > 0.0 && o.beta2 < 1.0) {
            return Err(Error::Config(format!("betas must lie in (0, 1), got ({}, {})", o.beta1, o.beta2)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for batch-norm statistics, got {}",
                self.batch_size
            )));
        }
        if self.is_splits == 0 {
            return Err(Error::Config("is_splits must be positive".into()));
        }
        if self.n_eval == Some(0) {
            return Err(Error::Config("n_eval must be positive".into()));
        }
        Ok(())
    }
}

/// State captured when training hits a non-finite loss.
#[derive(Debug, Clone)]
pub struct AbortSnapshot {
    pub step: usize,
    pub epoch: usize,
    pub seed: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub param_norms: Vec<(String, f64)>,
}

impl fmt::Display for AbortSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "non-finite loss at step {} (epoch {}, seed {}): d_loss {}, g_loss {}",
            self.step, self.epoch, self.seed, self.d_loss, self.g_loss
        )?;
        if let Some((name, norm)) = self
            .param_norms
            .iter()
            .find(|(_, n)| !n.is_finite())
            .or_else(|| self.param_norms.iter().max_by(|a, b| a.1.total_cmp(&b.1)))
        {
            write!(f, "; largest/non-finite parameter norm {name} = {norm}")?;
        }
        Ok(())
    }
}

/// Anything that maps latents to images.
pub trait GanGenerator: Module {
    fn latent_dim(&self) -> usize;
    fn forward(&self, z: &Tensor, mode: Mode) -> Result<Tensor>;
}

/// Anything that maps images to `[N, 1]` logits.
pub trait GanDiscriminator: Module {
    fn forward(&self, images: &Tensor, mode: Mode) -> Result<Tensor>;
}

impl GanGenerator for Generator {
    fn latent_dim(&self) -> usize {
        self.config().n_qubits
    }

    fn forward(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        Generator::forward(self, z, mode)
    }
}

impl GanDiscriminator for Discriminator {
    fn forward(&self, images: &Tensor, mode: Mode) -> Result<Tensor> {
        Discriminator::forward(self, images, mode)
    }
}

/// Both networks with their parameter lists and optimizers.
pub struct Gan<G, D> {
    pub generator: G,
    pub discriminator: D,
    g_params: Vec<Tensor>,
    d_params: Vec<Tensor>,
    g_opt: Adam,
    d_opt: Adam,
    latent: LatentDistribution,
}

impl<G: GanGenerator, D: GanDiscriminator> Gan<G, D> {
    pub fn new(generator: G, discriminator: D, optimizer: AdamConfig, latent: LatentDistribution) -> Result<Self> {
        let g_params = nn::parameters(&generator);
        let d_params = nn::parameters(&discriminator);
        Ok(Gan {
            g_opt: Adam::new(&g_params, optimizer)?,
            d_opt: Adam::new(&d_params, optimizer)?,
            generator,
            discriminator,
            g_params,
            d_params,
            latent,
        })
    }

    pub fn generator_parameters(&self) -> &[Tensor] {
        &self.g_params
    }

    pub fn discriminator_parameters(&self) -> &[Tensor] {
        &self.d_params
    }

    fn zero_grads(&self) {
        self.g_params.iter().chain(&self.d_params).for_each(Tensor::zero_grad);
    }

    fn param_norms(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (prefix, m) in [("generator", &self.generator as &dyn Module), ("discriminator", &self.discriminator)] {
            m.visit(prefix, &mut |name, t, _| out.push((name.to_string(), t.l2_norm())));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

/// One discriminator update followed by one generator update on fresh latents.
pub fn train_step<G: GanGenerator, D: GanDiscriminator>(
    gan: &mut Gan<G, D>,
    real: &Tensor,
    latent_rng: &mut Rng,
) -> Result<StepLosses> {
    let batch = real.shape()[0];
    let n = gan.generator.latent_dim();
    let ones = vec![1.0; batch];
    let zeros = vec![0.0; batch];

    gan.zero_grads();
    let z = crate::generator::sample_latent(gan.latent, batch, n, latent_rng);
    let fake = no_grad(|| gan.generator.forward(&z, Mode::Train))?;
    let d_real = bce_with_logits(&gan.discriminator.forward(real, Mode::Train)?, &ones)?;
    let d_fake = bce_with_logits(&gan.discriminator.forward(&fake, Mode::Train)?, &zeros)?;
    let d_loss = crate::tensor::add(&d_real, &d_fake)?;
    let d_value = d_loss.item();
    if !d_value.is_finite() {
        return Err(abort(gan, d_value, f64::NAN));
    }
    d_loss.backward()?;
    gan.d_opt.step(&gan.d_params)?;

    gan.zero_grads();
    let z = crate::generator::sample_latent(gan.latent, batch, n, latent_rng);
    let fake = gan.generator.forward(&z, Mode::Train)?;
    let g_loss = bce_with_logits(&gan.discriminator.forward(&fake, Mode::Train)?, &ones)?;
    let g_value = g_loss.item();
    if !g_value.is_finite() {
        return Err(abort(gan, d_value, g_value));
    }
    g_loss.backward()?;
    gan.g_opt.step(&gan.g_params)?;

    Ok(StepLosses {
        d_loss: d_value,
        g_loss: g_value,
    })
}

fn abort<G: GanGenerator, D: GanDiscriminator>(gan: &Gan<G, D>, d_loss: f64, g_loss: f64) -> Error {
    Error::Aborted(Box::new(AbortSnapshot {
        step: 0,
        epoch: 0,
        seed: 0,
        d_loss,
        g_loss,
        param_norms: gan.param_norms(),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based global step.
    pub step: usize,
    /// 1-based epoch.
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub evaluations: Vec<EvalRecord>,
    pub epoch_seconds: Vec<f64>,
}

/// Produces images for evaluation.
pub trait ImageSource {
    fn generate(&self, count: usize, rng: &mut Rng) -> Result<Tensor>;
}

impl ImageSource for Generator {
    /// Eval-mode batch norm, no autodiff graph.
    fn generate(&self, count: usize, rng: &mut Rng) -> Result<Tensor> {
        no_grad(|| Generator::generate(self, count, rng, Mode::Eval))
    }
}

/// Held-out real features plus the network that produced them.
pub struct EvalContext<'a> {
    pub extractor: &'a dyn FeatureExtractor,
    pub real: FeatureSet,
    pub n_gen: usize,
    pub is_splits: usize,
    pub seed: u64,
}

impl<'a> EvalContext<'a> {
    pub fn new(extractor: &'a dyn FeatureExtractor, held_out: &Dataset, n_gen: Option<usize>, is_splits: usize, seed: u64) -> Result<Self> {
        let real = extract_features(&held_out.to_batch().images, extractor, FeatureSource::Real)?;
        Ok(EvalContext {
            extractor,
            n_gen: n_gen.unwrap_or(real.rows),
            real,
            is_splits,
            seed,
        })
    }
}

/// FID, KID and IS of `n_gen` images from a fixed latent stream against the
/// held-out real features.
pub fn evaluate_epoch(source: &dyn ImageSource, ctx: &EvalContext<'_>) -> Result<MetricReport> {
    let mut r = rng::seeded(ctx.seed, rng::stream::EVAL_LATENT);
    let images = source.generate(ctx.n_gen, &mut r)?;
    let gen = extract_features(&images, ctx.extractor, FeatureSource::Generated)?;
    let probs = ctx.extractor.class_probabilities(&images)?;
    let (is_mean, is_std) = metrics::inception_score(&probs, ctx.is_splits.min(probs.rows))?;
    Ok(MetricReport {
        fid: metrics::fid(&ctx.real, &gen)?,
        kid: metrics::kid(&ctx.real, &gen)?,
        is_mean,
        is_std,
        extractor_id: ctx.extractor.id().to_string(),
        n_eval: ctx.n_gen,
    })
}

/// Called at every evaluation epoch with the current generator.
pub type EvalHook<'h> = dyn FnMut(usize, &Generator) -> Result<()> + 'h;

fn is_eval_epoch(epoch: usize, config: &TrainConfig) -> bool {
    epoch == 0 || epoch == config.epochs || (config.metric_every > 0 && epoch % config.metric_every == 0)
}

/// Full training run. Evaluates before the first epoch, every
/// `metric_every` epochs and after the last.
pub fn train(
    config: &TrainConfig,
    generator: Generator,
    discriminator: Discriminator,
    data: &Dataset,
    eval: Option<&EvalContext<'_>>,
    hook: &mut EvalHook<'_>,
) -> Result<(RunLog, Gan<Generator, Discriminator>)> {
    config.validate()?;
    if data.len() < config.batch_size {
        return Err(Error::Config(format!(
            "dataset of {} images cannot fill a batch of {}",
            data.len(),
            config.batch_size
        )));
    }
    let mut gan = Gan::new(generator, discriminator, config.optimizer, config.latent)?;
    let mut latent_rng = rng::seeded(config.seed, rng::stream::LATENT);
    let mut log = RunLog::default();
    let mut evaluate = |epoch: usize, gan: &Gan<Generator, Discriminator>, log: &mut RunLog| -> Result<()> {
        if !is_eval_epoch(epoch, config) {
            return Ok(());
        }
        if let Some(ctx) = eval {
            let report = evaluate_epoch(&gan.generator, ctx)?;
            log::info!(
                "epoch {epoch}: FID {:.4} KID {:.4} IS {:.4}",
                report.fid,
                report.kid,
                report.is_mean
            );
            log.evaluations.push(EvalRecord { epoch, report });
        }
        hook(epoch, &gan.generator)
    };
    evaluate(0, &gan, &mut log)?;
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        for batch in batch_iter(data, config.batch_size, config.seed, epoch as u64)? {
            step += 1;
            let losses = train_step(&mut gan, &batch.images, &mut latent_rng).map_err(|e| match e {
                Error::Aborted(mut snap) => {
                    snap.step = step;
                    snap.epoch = epoch;
                    snap.seed = config.seed;
                    Error::Aborted(snap)
                }
                other => other,
            })?;
            log.steps.push(StepRecord {
                step,
                epoch,
                d_loss: losses.d_loss,
                g_loss: losses.g_loss,
            });
        }
        log.epoch_seconds.push(started.elapsed().as_secs_f64());
        if let Some(last) = log.steps.last() {
            log::debug!("epoch {epoch}: d_loss {:.4} g_loss {:.4}", last.d_loss, last.g_loss);
        }
        evaluate(epoch, &gan, &mut log)?;
    }
    Ok((log, gan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{join, Role};

    /// `x = a·z`, a single image pixel.
    struct ToyG {
        a: Tensor,
    }

    impl Module for ToyG {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
            f(&join(prefix, "a"), &self.a, Role::Parameter);
        }
    }

    impl GanGenerator for ToyG {
        fn latent_dim(&self) -> usize {
            1
        }

        fn forward(&self, z: &Tensor, _: Mode) -> Result<Tensor> {
            let n = z.shape()[0];
            let a = crate::tensor::reshape(&self.a, &[1, 1])?;
            let y = crate::tensor::linear(z, &a, None)?;
            crate::tensor::reshape(&y, &[n, 1, 1, 1])
        }
    }

    /// `logit = w·x`.
    struct ToyD {
        w: Tensor,
    }

    impl Module for ToyD {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
            f(&join(prefix, "w"), &self.w, Role::Parameter);
        }
    }

    impl GanDiscriminator for ToyD {
        fn forward(&self, x: &Tensor, _: Mode) -> Result<Tensor> {
            let n = x.shape()[0];
            let flat = crate::tensor::reshape(x, &[n, 1])?;
            crate::tensor::linear(&flat, &crate::tensor::reshape(&self.w, &[1, 1])?, None)
        }
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn scalar_gan_matches_hand_gradients() {
        let (a0, w0) = (0.7, -0.4);
        let g = ToyG { a: Tensor::param(&[1], vec![a0]).unwrap() };
        let d = ToyD { w: Tensor::param(&[1], vec![w0]).unwrap() };
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut gan = Gan::new(g, d, cfg, LatentDistribution::Uniform).unwrap();
        let real = Tensor::new(&[2, 1, 1, 1], vec![1.0, -0.5]).unwrap();
        let mut r = rng::seeded(11, 0);
        let mut replay = r.clone();
        let losses = train_step(&mut gan, &real, &mut r).unwrap();

        let z1 = crate::generator::sample_latent(LatentDistribution::Uniform, 2, 1, &mut replay).to_vec();
        let z2 = crate::generator::sample_latent(LatentDistribution::Uniform, 2, 1, &mut replay).to_vec();
        // D loss = mean softplus(-w x_r) + mean softplus(w a z1)
        let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
        let xr = [1.0, -0.5];
        let d_loss = xr.iter().map(|x| softplus(-w0 * x)).sum::<f64>() / 2.0
            + z1.iter().map(|z| softplus(w0 * a0 * z)).sum::<f64>() / 2.0;
        let gw = xr.iter().map(|x| -x * sigmoid(-w0 * x)).sum::<f64>() / 2.0
            + z1.iter().map(|z| a0 * z * sigmoid(w0 * a0 * z)).sum::<f64>() / 2.0;
        // Adam's first step moves by lr·g/(|g| + ε)
        let w1 = w0 - 0.01 * gw / (gw.abs() + 1e-8);
        let g_loss = z2.iter().map(|z| softplus(-w1 * a0 * z)).sum::<f64>() / 2.0;
        let ga = z2.iter().map(|z| -w1 * z * sigmoid(-w1 * a0 * z)).sum::<f64>() / 2.0;
        let a1 = a0 - 0.01 * ga / (ga.abs() + 1e-8);

        assert!((losses.d_loss - d_loss).abs() < 1e-12);
        assert!((losses.g_loss - g_loss).abs() < 1e-12);
        assert!((gan.discriminator.w.item() - w1).abs() < 1e-12);
        assert!((gan.generator.a.item() - a1).abs() < 1e-12);
    }

    #[test]
    fn zero_logits_give_log2_losses() {
        let g = ToyG { a: Tensor::param(&[1], vec![0.3]).unwrap() };
        let d = ToyD { w: Tensor::param(&[1], vec![0.0]).unwrap() };
        let mut gan = Gan::new(g, d, AdamConfig::default(), LatentDistribution::Uniform).unwrap();
        let real = Tensor::new(&[2, 1, 1, 1], vec![0.5, 0.5]).unwrap();
        // after the D step w moves by ~2e-4, so g_loss is ln 2 to within 1e-4
        let l = train_step(&mut gan, &real, &mut rng::seeded(0, 0)).unwrap();
        assert!((l.d_loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l.g_loss - std::f64::consts::LN_2).abs() < 1e-3);
    }

    #[test]
    fn nan_loss_aborts_with_snapshot() {
        let g = ToyG { a: Tensor::param(&[1], vec![f64::NAN]).unwrap() };
        let d = ToyD { w: Tensor::param(&[1], vec![1.0]).unwrap() };
        let mut gan = Gan::new(g, d, AdamConfig::default(), LatentDistribution::Uniform).unwrap();
        let real = Tensor::new(&[2, 1, 1, 1], vec![0.5, 0.5]).unwrap();
        match train_step(&mut gan, &real, &mut rng::seeded(0, 0)) {
            Err(Error::Aborted(snap)) => {
                assert_eq!(snap.param_norms.len(), 2);
                assert!(snap.to_string().contains("generator.a"));
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn eval_schedule() {
        let cfg = TrainConfig {
            epochs: 7,
            metric_every: 3,
            ..TrainConfig::default()
        };
        let got: Vec<usize> = (0..=7).filter(|&e| is_eval_epoch(e, &cfg)).collect();
        assert_eq!(got, vec![0, 3, 6, 7]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.optimizer.beta1 = 1.0;
        assert!(c.validate().is_err());
        let c = TrainConfig { batch_size: 1, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
