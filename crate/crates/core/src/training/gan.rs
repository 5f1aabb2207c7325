use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{write_metrics_header, MetricsRow, METRICS_FILE};
use super::{save_checkpoint_atomic, stream_rng, stream_seed, BatchSampler, Pipeline, Stream, TrainConfig, TrainError};
use crate::autodiff::{AdamState, NormMode, Tape, Tensor};
use crate::dataset::Dataset;
use crate::eval::batch_mean_score;
use crate::models::{
    adam_to_checkpoint, images_to_tensor, sample_noise, score_proxy, score_proxy_values, tensor_to_images, Classifier,
    Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ProxyKind, IMAGE_SIZE,
};
use crate::topology::{score_label_or_zero, GrayImage, ScoreConfig, TOP_LABEL};

/// Files a training run may write into its output directory.
pub const CHECKPOINT_FILES: [&str; 7] = [
    "g.ckpt",
    "d1.ckpt",
    "d2.ckpt",
    "g_opt.ckpt",
    "d1_opt.ckpt",
    "g_cls_opt.ckpt",
    "d2_opt.ckpt",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GanArch {
    pub g: GeneratorConfig,
    pub d1: DiscriminatorConfig,
}

/// One Adam state per update path. The classifier phase of the generator
/// keeps its own moments so the adversarial path is unaffected by it.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub g: AdamState<f32>,
    pub d1: AdamState<f32>,
    pub g_cls: AdamState<f32>,
    pub d2: AdamState<f32>,
}

impl Optimizers {
    pub fn new(cfg: &TrainConfig) -> Self {
        let adam = |lr| AdamState::new(lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
        Self {
            g: adam(cfg.lr_g_adv),
            d1: adam(cfg.lr_d1),
            g_cls: adam(cfg.lr_g_cls),
            d2: adam(cfg.lr_cls_finetune),
        }
    }
}

/// Losses of one iteration; NaN where a phase did not run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub loss_d1: f32,
    pub loss_g_adv: f32,
    pub loss_g_cls: f32,
    pub loss_d2: f32,
}

/// DCGAN iteration: a discriminator step on real data and detached fakes,
/// then a non-saturating generator step on fresh noise. Returns
/// `(loss_d1, loss_g_adv, generator-step noise)`.
pub fn dcgan_step(
    g: &mut Generator,
    d1: &mut Discriminator,
    real: &Tensor<f32>,
    opt_g: &mut AdamState<f32>,
    opt_d1: &mut AdamState<f32>,
    rng: &mut impl Rng,
) -> Result<(f32, f32, Tensor<f32>), TrainError> {
    let n = real.shape()[0];
    let latent = g.config.latent_dim;
    let ones = vec![1.0f32; n];
    let zeros = vec![0.0f32; n];

    let mut tape = Tape::new();
    let z = tape.constant(sample_noise(rng, n, latent));
    let fake = g.forward(&mut tape, z, NormMode::Train, false)?;
    let xr = tape.constant(real.clone());
    let on_real = d1.forward(&mut tape, xr, NormMode::Train, true)?;
    let l_real = tape.bce_with_logits(on_real, &ones)?;
    let on_fake = d1.forward(&mut tape, fake, NormMode::Train, true)?;
    let l_fake = tape.bce_with_logits(on_fake, &zeros)?;
    let loss_d = tape.add(l_real, l_fake)?;
    tape.backward(loss_d)?;
    d1.params.adam_step(&tape, opt_d1)?;
    let loss_d1 = tape.value(loss_d).item();

    let z_g = sample_noise(rng, n, latent);
    let mut tape = Tape::new();
    let z = tape.constant(z_g.clone());
    let fake = g.forward(&mut tape, z, NormMode::Train, true)?;
    let judged = d1.forward(&mut tape, fake, NormMode::Train, false)?;
    let loss_g = tape.bce_with_logits(judged, &ones)?;
    tape.backward(loss_g)?;
    g.params.adam_step(&tape, opt_g)?;
    Ok((loss_d1, tape.value(loss_g).item(), z_g))
}

/// Generator-only step toward the classifier's single-component label.
/// Batch statistics are used but running statistics are not advanced, and
/// the classifier is a constant in eval mode. Returns the loss and the
/// generated images.
pub fn reggan_phase2(
    g: &mut Generator,
    d2: &Classifier,
    z: Tensor<f32>,
    proxy: ProxyKind,
    opt_g_cls: &mut AdamState<f32>,
) -> Result<(f32, Tensor<f32>), TrainError> {
    let n = z.shape()[0];
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let fake = g.forward(&mut tape, zv, NormMode::TrainFrozenStats, true)?;
    let logits = d2.forward_frozen(&mut tape, fake, NormMode::Eval)?;
    let loss = match proxy {
        ProxyKind::TopLabel => tape.cross_entropy(logits, &vec![TOP_LABEL as usize; n])?,
        ProxyKind::ExpectedBin => {
            let p = score_proxy(&mut tape, logits, proxy)?;
            let m = tape.mean(p);
            tape.affine(m, -1.0, 1.0)
        }
    };
    tape.backward(loss)?;
    g.params.adam_step(&tape, opt_g_cls)?;
    Ok((tape.value(loss).item(), tape.value(fake).clone()))
}

/// Cross-entropy step of the classifier on images labeled by the exact
/// score function. Batch statistics normalize the batch but the running
/// statistics learned in pretraining are kept. Returns the loss and the
/// labels used.
pub fn classifier_finetune_step(
    d2: &mut Classifier,
    images: &Tensor<f32>,
    score_cfg: &ScoreConfig,
    opt_d2: &mut AdamState<f32>,
) -> Result<(f32, Vec<u8>), TrainError> {
    let labels: Vec<u8> = tensor_to_images(images)?
        .iter()
        .map(|img| score_label_or_zero(img, score_cfg))
        .collect();
    let targets: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let logits = d2.forward(&mut tape, x, NormMode::TrainFrozenStats, true)?;
    let loss = tape.cross_entropy(logits, &targets)?;
    tape.backward(loss)?;
    d2.params.adam_step(&tape, opt_d2)?;
    Ok((tape.value(loss).item(), labels))
}

/// Scores a generated batch: `(mean exact score, mean proxy, fraction with
/// label 10)`. The proxy is NaN without a classifier. Images come from batch
/// statistics without advancing running statistics.
pub fn evaluate_generator(
    g: &Generator,
    d2: Option<&Classifier>,
    z: Tensor<f32>,
    proxy: ProxyKind,
    score_cfg: &ScoreConfig,
) -> Result<(f64, f64, f64), TrainError> {
    let mut tape = Tape::new();
    let zv = tape.constant(z);
    let out = g.forward_frozen(&mut tape, zv, NormMode::TrainFrozenStats)?;
    let images = tape.value(out);
    let imgs = tensor_to_images(images)?;
    let refs: Vec<&GrayImage> = imgs.iter().collect();
    let mean_score = batch_mean_score(&refs, score_cfg).map_err(|e| TrainError::Config(e.to_string()))?;
    let top = refs.iter().filter(|img| score_label_or_zero(img, score_cfg) == TOP_LABEL).count();
    let mean_proxy = match d2 {
        Some(c) => {
            let p = score_proxy_values(&c.logits(images)?, proxy)?;
            p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64
        }
        None => f64::NAN,
    };
    Ok((mean_score, mean_proxy, top as f64 / refs.len() as f64))
}

/// Everything a run mutates.
#[derive(Clone, Debug)]
pub struct GanState {
    pub pipeline: Pipeline,
    pub cfg: TrainConfig,
    pub g: Generator,
    pub d1: Discriminator,
    pub d2: Option<Classifier>,
    pub opt: Optimizers,
    pub iteration: usize,
    sampler: BatchSampler,
    noise_rng: ChaCha8Rng,
    cls_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    score_cfg: ScoreConfig,
}

impl GanState {
    /// `d2` is required for RegGAN; for DCGAN it only feeds the proxy column.
    pub fn new(pipeline: Pipeline, cfg: &TrainConfig, arch: &GanArch, d2: Option<Classifier>, data_len: usize) -> Result<Self, TrainError> {
        cfg.validate()?;
        if pipeline == Pipeline::Reggan && d2.is_none() {
            return Err(TrainError::Config("reggan needs a pretrained classifier".into()));
        }
        if data_len < cfg.batch_size {
            return Err(TrainError::DataTooSmall {
                have: data_len,
                need: cfg.batch_size,
            });
        }
        Ok(Self {
            pipeline,
            cfg: cfg.clone(),
            g: Generator::new(arch.g.clone(), stream_seed(cfg.seed, Stream::InitG))?,
            d1: Discriminator::new(arch.d1.clone(), stream_seed(cfg.seed, Stream::InitD1))?,
            d2,
            opt: Optimizers::new(cfg),
            iteration: 0,
            sampler: BatchSampler::new((0..data_len).collect(), stream_seed(cfg.seed, Stream::Data)),
            noise_rng: stream_rng(cfg.seed, Stream::Noise),
            cls_rng: stream_rng(cfg.seed, Stream::ClassifierNoise),
            eval_rng: stream_rng(cfg.seed, Stream::Eval),
            score_cfg: ScoreConfig::new(cfg.alpha).map_err(|e| TrainError::Config(e.to_string()))?,
        })
    }

    pub fn step(&mut self, data: &Dataset) -> Result<StepLosses, TrainError> {
        let batch = self.sampler.next_batch(self.cfg.batch_size);
        let imgs: Vec<&GrayImage> = batch.iter().map(|&i| &data.images[i]).collect();
        let real = images_to_tensor(&imgs)?;
        let (loss_d1, loss_g_adv, z_g) = dcgan_step(&mut self.g, &mut self.d1, &real, &mut self.opt.g, &mut self.opt.d1, &mut self.noise_rng)?;
        let mut out = StepLosses {
            loss_d1,
            loss_g_adv,
            loss_g_cls: f32::NAN,
            loss_d2: f32::NAN,
        };
        if self.pipeline == Pipeline::Reggan {
            let d2 = self.d2.as_mut().expect("checked at construction");
            let z = if self.cfg.reuse_phase1_noise {
                z_g
            } else {
                sample_noise(&mut self.cls_rng, self.cfg.batch_size, self.g.config.latent_dim)
            };
            let (loss, fake) = reggan_phase2(&mut self.g, d2, z, self.cfg.proxy, &mut self.opt.g_cls)?;
            out.loss_g_cls = loss;
            if self.cfg.update_classifier {
                out.loss_d2 = classifier_finetune_step(d2, &fake, &self.score_cfg, &mut self.opt.d2)?.0;
            }
        }
        self.iteration += 1;
        Ok(out)
    }

    pub fn evaluate(&mut self) -> Result<(f64, f64, f64), TrainError> {
        let z = sample_noise(&mut self.eval_rng, self.cfg.eval_batch, self.g.config.latent_dim);
        evaluate_generator(&self.g, self.d2.as_ref(), z, self.cfg.proxy, &self.score_cfg)
    }

    /// Writes model and optimizer checkpoints into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        save_checkpoint_atomic(&self.g.params.to_checkpoint(), &dir.join("g.ckpt"))?;
        save_checkpoint_atomic(&self.d1.params.to_checkpoint(), &dir.join("d1.ckpt"))?;
        save_checkpoint_atomic(&adam_to_checkpoint(&self.opt.g), &dir.join("g_opt.ckpt"))?;
        save_checkpoint_atomic(&adam_to_checkpoint(&self.opt.d1), &dir.join("d1_opt.ckpt"))?;
        if let Some(d2) = &self.d2 {
            save_checkpoint_atomic(&d2.params.to_checkpoint(), &dir.join("d2.ckpt"))?;
        }
        if self.pipeline == Pipeline::Reggan {
            save_checkpoint_atomic(&adam_to_checkpoint(&self.opt.g_cls), &dir.join("g_cls_opt.ckpt"))?;
            if self.cfg.update_classifier {
                save_checkpoint_atomic(&adam_to_checkpoint(&self.opt.d2), &dir.join("d2_opt.ckpt"))?;
            }
        }
        Ok(())
    }

    /// `key=value` lines describing the run, one setting per line.
    pub fn config_snapshot(&self) -> String {
        let c = &self.cfg;
        let mut lines = vec![
            format!("pipeline={}", self.pipeline.name()),
            format!("seed={}", c.seed),
            format!("batch_size={}", c.batch_size),
            format!("iterations={}", c.iterations),
            format!("lr_d1={}", c.lr_d1),
            format!("lr_g_adv={}", c.lr_g_adv),
            format!("lr_g_cls={}", c.lr_g_cls),
            format!("lr_cls_finetune={}", c.lr_cls_finetune),
            format!("beta1={}", c.beta1),
            format!("beta2={}", c.beta2),
            format!("adam_eps={}", c.adam_eps),
            format!("eval_every={}", c.eval_every),
            format!("eval_batch={}", c.eval_batch),
            format!("update_classifier={}", c.update_classifier),
            format!("checkpoint_every={}", c.checkpoint_every),
            format!("proxy={}", c.proxy),
            format!("reuse_phase1_noise={}", c.reuse_phase1_noise),
            format!("alpha={}", c.alpha),
            format!("latent_dim={}", self.g.config.latent_dim),
            format!("g_widths={}", join(&self.g.config.widths)),
            format!("g_batchnorm={}", self.g.config.batchnorm),
            format!("d1_widths={}", join(&self.d1.config.widths)),
            format!("d1_batchnorm={}", self.d1.config.batchnorm),
        ];
        if let Some(d2) = &self.d2 {
            lines.push(format!("d2_conv_widths={}", join(&d2.config.conv_widths)));
            lines.push(format!("d2_fc_widths={}", join(&d2.config.fc_widths)));
            lines.push(format!("d2_batchnorm={}", d2.config.batchnorm));
        }
        lines.join("\n") + "\n"
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: GanState,
    pub metrics: Vec<MetricsRow>,
    pub losses: Vec<StepLosses>,
}

/// Runs `cfg.iterations` steps. With `out_dir` it writes `run.json`,
/// appends to `metrics.csv` as rows are produced, and checkpoints every
/// `checkpoint_every` iterations and at the end.
pub fn train(
    pipeline: Pipeline,
    data: &Dataset,
    cfg: &TrainConfig,
    arch: &GanArch,
    d2: Option<Classifier>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    train_observed(pipeline, data, cfg, arch, d2, out_dir, |_| {})
}

/// [`train`] calling `on_row` with every metrics row as it is recorded.
pub fn train_observed(
    pipeline: Pipeline,
    data: &Dataset,
    cfg: &TrainConfig,
    arch: &GanArch,
    d2: Option<Classifier>,
    out_dir: Option<&Path>,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome, TrainError> {
    if let Some(img) = data.images.iter().find(|i| i.height() != IMAGE_SIZE || i.width() != IMAGE_SIZE) {
        return Err(TrainError::Config(format!(
            "training images must be {IMAGE_SIZE}x{IMAGE_SIZE}, found {}x{}",
            img.height(),
            img.width()
        )));
    }
    let mut state = GanState::new(pipeline, cfg, arch, d2, data.len())?;
    let mut csv = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("run.json"), state.config_snapshot())?;
            let mut w = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
            write_metrics_header(&mut w)?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let mut metrics = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let l = state.step(data)?;
        losses.push(l);
        let it = state.iteration;
        if it % cfg.eval_every == 0 {
            let (mean_score, mean_proxy, frac_label10) = state.evaluate()?;
            let row = MetricsRow {
                iter: it,
                loss_d1: l.loss_d1,
                loss_g_adv: l.loss_g_adv,
                loss_g_cls: l.loss_g_cls,
                mean_score,
                mean_proxy,
                frac_label10,
            };
            if let Some(w) = csv.as_mut() {
                writeln!(w, "{}", row.to_csv())?;
                w.flush()?;
            }
            on_row(&row);
            metrics.push(row);
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
                state.save(dir)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        state.save(dir)?;
    }
    Ok(TrainOutcome { state, metrics, losses })
}
