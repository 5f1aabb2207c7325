//! The three networks: generator G, adversarial discriminator D1 and score
//! classifier D2.
//!
//! Parameter names are stable and double as checkpoint keys:
//!
//! | network | pattern |
//! |---------|---------|
//! | G  | `g/stage{0..4}/weight`, `g/stage{i}/bn/{gamma,beta,running_mean,running_var}`, `g/stage4/bias` |
//! | D1 | `d1/stage{0..4}/weight`, `d1/stage{1..3}/bn/...`, `d1/stage0/bias`, `d1/stage4/bias` |
//! | D2 | `d2/conv{0..3}/weight`, `d2/conv{i}/bn/...`, `d2/fc{0..2}/{weight,bias}` |
//!
//! Stages without batch norm carry a bias instead. With the default widths
//! the generator has 3,574,657 trainable parameters.

mod store;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rand::SeedableRng;

pub use store::{adam_from_checkpoint, adam_to_checkpoint, Param, ParamStore};

use crate::autodiff::{AutodiffError, Checkpoint, NormMode, RunningStats, Tape, Tensor, Var};
use crate::topology::{GrayImage, NUM_LABELS, TOP_LABEL};

/// Side length of every image the shipped architectures accept or produce.
pub const IMAGE_SIZE: usize = 64;
pub const BN_MOMENTUM: f32 = 0.1;
pub const BN_EPS: f32 = 1e-5;
pub const INIT_STD: f32 = 0.02;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint lacks parameter {0}")]
    MissingParam(String),
    #[error("checkpoint has unknown parameter {0}")]
    UnexpectedParam(String),
    #[error("parameter {name}: expected shape {expected:?}, checkpoint has {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid architecture: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    /// Output channels of stages 0 to 3; stage 4 always emits one channel.
    pub widths: [usize; 4],
    pub batchnorm: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 100,
            widths: [512, 256, 128, 64],
            batchnorm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    /// Output channels of stages 0 to 3; stage 4 always emits one logit.
    pub widths: [usize; 4],
    pub slope: f32,
    pub batchnorm: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            widths: [64, 128, 256, 512],
            slope: 0.2,
            batchnorm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    /// 3x3 conv widths; a 2x2 max pool follows conv1 and conv3.
    pub conv_widths: [usize; 4],
    /// Hidden widths of fc0 and fc1; fc2 emits the 11 label logits.
    pub fc_widths: [usize; 2],
    pub batchnorm: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            conv_widths: [8, 8, 16, 16],
            fc_widths: [128, 64],
            batchnorm: true,
        }
    }
}

fn ckpt_shape<'a>(ck: &'a Checkpoint, name: &str) -> Result<&'a [usize], ModelError> {
    ck.get(name).map(Tensor::shape).ok_or_else(|| ModelError::MissingParam(name.to_string()))
}

fn dim(shape: &[usize], axis: usize, name: &str) -> Result<usize, ModelError> {
    shape
        .get(axis)
        .copied()
        .ok_or_else(|| ModelError::Config(format!("{name} has rank {}", shape.len())))
}

impl GeneratorConfig {
    /// Architecture implied by the tensor shapes of a generator checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let first = ckpt_shape(ck, "g/stage0/weight")?;
        let latent_dim = dim(first, 0, "g/stage0/weight")?;
        let mut widths = [0; 4];
        for (s, w) in widths.iter_mut().enumerate() {
            let name = format!("g/stage{s}/weight");
            *w = dim(ckpt_shape(ck, &name)?, 1, &name)?;
        }
        Ok(Self {
            latent_dim,
            widths,
            batchnorm: ck.get("g/stage0/bn/gamma").is_some(),
        })
    }
}

impl DiscriminatorConfig {
    /// Architecture implied by a discriminator checkpoint; the leaky slope
    /// is not stored and takes its default.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let mut widths = [0; 4];
        for (s, w) in widths.iter_mut().enumerate() {
            let name = format!("d1/stage{s}/weight");
            *w = dim(ckpt_shape(ck, &name)?, 0, &name)?;
        }
        Ok(Self {
            widths,
            batchnorm: ck.get("d1/stage1/bn/gamma").is_some(),
            ..Self::default()
        })
    }
}

impl ClassifierConfig {
    /// Architecture implied by a classifier checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let mut conv_widths = [0; 4];
        for (i, w) in conv_widths.iter_mut().enumerate() {
            let name = format!("d2/conv{i}/weight");
            *w = dim(ckpt_shape(ck, &name)?, 0, &name)?;
        }
        let mut fc_widths = [0; 2];
        for (i, w) in fc_widths.iter_mut().enumerate() {
            let name = format!("d2/fc{i}/weight");
            *w = dim(ckpt_shape(ck, &name)?, 0, &name)?;
        }
        Ok(Self {
            conv_widths,
            fc_widths,
            batchnorm: ck.get("d2/conv0/bn/gamma").is_some(),
        })
    }
}

fn check_widths(widths: &[usize], what: &str) -> Result<(), ModelError> {
    if widths.contains(&0) {
        return Err(ModelError::Config(format!("{what} widths must be positive, got {widths:?}")));
    }
    Ok(())
}

fn add_bn(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut impl Rng) {
    store.normal(&format!("{prefix}/bn/gamma"), &[channels], 1.0, INIT_STD, rng);
    store.insert(format!("{prefix}/bn/beta"), Tensor::zeros(&[channels]), true);
    store.insert(format!("{prefix}/bn/running_mean"), Tensor::zeros(&[channels]), false);
    store.insert(format!("{prefix}/bn/running_var"), Tensor::full(&[channels], 1.0), false);
}

/// Weight, then either batch norm or a bias.
fn add_layer(store: &mut ParamStore, prefix: &str, shape: &[usize], bias_len: usize, bn: bool, rng: &mut impl Rng) {
    store.normal(&format!("{prefix}/weight"), shape, 0.0, INIT_STD, rng);
    if bn {
        add_bn(store, prefix, bias_len, rng);
    } else {
        store.insert(format!("{prefix}/bias"), Tensor::zeros(&[bias_len]), true);
    }
}

/// State threaded through one forward pass.
struct Pass<'a> {
    store: &'a ParamStore,
    tape: &'a mut Tape<f32>,
    mode: NormMode,
    trainable: bool,
    updates: Vec<(String, RunningStats<f32>)>,
}

impl Pass<'_> {
    fn param(&mut self, name: &str) -> Var {
        self.store.bind(self.tape, name, self.trainable)
    }

    fn bias(&mut self, prefix: &str) -> Option<Var> {
        let name = format!("{prefix}/bias");
        self.store.get(&name).is_some().then(|| self.param(&name))
    }

    /// Batch norm when the stage has one; identity otherwise.
    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var, ModelError> {
        let mean = format!("{prefix}/bn/running_mean");
        let Some(rm) = self.store.get(&mean) else { return Ok(x) };
        let mut stats = RunningStats {
            mean: rm.data().to_vec(),
            var: self.store.expect(&format!("{prefix}/bn/running_var")).data().to_vec(),
        };
        let gamma = self.param(&format!("{prefix}/bn/gamma"));
        let beta = self.param(&format!("{prefix}/bn/beta"));
        let y = self.tape.batchnorm(x, gamma, beta, &mut stats, self.mode, BN_MOMENTUM, BN_EPS)?;
        if self.mode == NormMode::Train {
            self.updates.push((prefix.to_string(), stats));
        }
        Ok(y)
    }
}

fn apply_updates(store: &mut ParamStore, updates: Vec<(String, RunningStats<f32>)>) {
    for (prefix, stats) in updates {
        store
            .get_mut(&format!("{prefix}/bn/running_mean"))
            .expect("bn buffer")
            .data_mut()
            .copy_from_slice(&stats.mean);
        store
            .get_mut(&format!("{prefix}/bn/running_var"))
            .expect("bn buffer")
            .data_mut()
            .copy_from_slice(&stats.var);
    }
}

fn expect_images(tape: &Tape<f32>, x: Var) -> Result<usize, ModelError> {
    match tape.shape(x) {
        &[n, 1, IMAGE_SIZE, IMAGE_SIZE] => Ok(n),
        other => Err(AutodiffError::shape(format!("expected [N,1,{IMAGE_SIZE},{IMAGE_SIZE}] images, got {other:?}")).into()),
    }
}

/// Generator: `z: [N, latent]` to ink-scale images `[N,1,64,64]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamStore,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self, ModelError> {
        check_widths(&config.widths, "generator")?;
        if config.latent_dim == 0 {
            return Err(ModelError::Config("latent_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let chans = [config.latent_dim, config.widths[0], config.widths[1], config.widths[2], config.widths[3], 1];
        for s in 0..5 {
            let last = s == 4;
            add_layer(
                &mut params,
                &format!("g/stage{s}"),
                &[chans[s], chans[s + 1], 4, 4],
                chans[s + 1],
                config.batchnorm && !last,
                &mut rng,
            );
        }
        Ok(Self { config, params })
    }

    /// Records the forward pass on `tape`. `Train` mode also updates the
    /// running statistics.
    pub fn forward(&mut self, tape: &mut Tape<f32>, z: Var, mode: NormMode, trainable: bool) -> Result<Var, ModelError> {
        let (y, updates) = self.run(tape, z, mode, trainable)?;
        apply_updates(&mut self.params, updates);
        Ok(y)
    }

    /// Forward with every parameter held constant and running statistics
    /// left untouched, whatever the mode.
    pub fn forward_frozen(&self, tape: &mut Tape<f32>, z: Var, mode: NormMode) -> Result<Var, ModelError> {
        Ok(self.run(tape, z, mode, false)?.0)
    }

    fn run(&self, tape: &mut Tape<f32>, z: Var, mode: NormMode, trainable: bool) -> Result<(Var, Vec<(String, RunningStats<f32>)>), ModelError> {
        let &[n, d] = tape.shape(z) else {
            return Err(AutodiffError::shape(format!("noise must be [N,{}], got {:?}", self.config.latent_dim, tape.shape(z))).into());
        };
        if d != self.config.latent_dim {
            return Err(AutodiffError::shape(format!("noise width {d} != latent_dim {}", self.config.latent_dim)).into());
        }
        let mut pass = Pass {
            store: &self.params,
            tape,
            mode,
            trainable,
            updates: Vec::new(),
        };
        let mut h = pass.tape.reshape(z, &[n, d, 1, 1])?;
        for s in 0..5 {
            let prefix = format!("g/stage{s}");
            let w = pass.param(&format!("{prefix}/weight"));
            let b = pass.bias(&prefix);
            let (stride, pad) = if s == 0 { (1, 0) } else { (2, 1) };
            h = pass.tape.conv_transpose2d(h, w, b, stride, pad)?;
            if s < 4 {
                h = pass.norm(h, &prefix)?;
                h = pass.tape.relu(h);
            }
        }
        let t = pass.tape.tanh(h);
        let out = pass.tape.affine(t, 0.5, 0.5);
        Ok((out, pass.updates))
    }

    /// Eval-mode images for `z`, without touching any state.
    pub fn generate(&self, z: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        self.generate_with(z, NormMode::Eval)
    }

    /// Images for `z` without touching the running statistics.
    pub fn generate_with(&self, z: &Tensor<f32>, mode: NormMode) -> Result<Tensor<f32>, ModelError> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let (y, _) = self.run(&mut tape, zv, mode, false)?;
        Ok(tape.value(y).clone())
    }
}

/// Adversarial discriminator: images to raw logits `[N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamStore,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self, ModelError> {
        check_widths(&config.widths, "discriminator")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let chans = [1, config.widths[0], config.widths[1], config.widths[2], config.widths[3], 1];
        for s in 0..5 {
            let bn = config.batchnorm && (1..4).contains(&s);
            add_layer(&mut params, &format!("d1/stage{s}"), &[chans[s + 1], chans[s], 4, 4], chans[s + 1], bn, &mut rng);
        }
        Ok(Self { config, params })
    }

    pub fn forward(&mut self, tape: &mut Tape<f32>, x: Var, mode: NormMode, trainable: bool) -> Result<Var, ModelError> {
        let (y, updates) = self.run(tape, x, mode, trainable)?;
        apply_updates(&mut self.params, updates);
        Ok(y)
    }

    /// Forward with every parameter held constant and running statistics
    /// left untouched, whatever the mode.
    pub fn forward_frozen(&self, tape: &mut Tape<f32>, x: Var, mode: NormMode) -> Result<Var, ModelError> {
        Ok(self.run(tape, x, mode, false)?.0)
    }

    fn run(&self, tape: &mut Tape<f32>, x: Var, mode: NormMode, trainable: bool) -> Result<(Var, Vec<(String, RunningStats<f32>)>), ModelError> {
        let n = expect_images(tape, x)?;
        let mut pass = Pass {
            store: &self.params,
            tape,
            mode,
            trainable,
            updates: Vec::new(),
        };
        let mut h = x;
        for s in 0..5 {
            let prefix = format!("d1/stage{s}");
            let w = pass.param(&format!("{prefix}/weight"));
            let b = pass.bias(&prefix);
            let (stride, pad) = if s == 4 { (1, 0) } else { (2, 1) };
            h = pass.tape.conv2d(h, w, b, stride, pad)?;
            if s < 4 {
                h = pass.norm(h, &prefix)?;
                h = pass.tape.leaky_relu(h, self.config.slope);
            }
        }
        let out = pass.tape.reshape(h, &[n])?;
        Ok((out, pass.updates))
    }

    pub fn logits(&self, images: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let (y, _) = self.run(&mut tape, x, NormMode::Eval, false)?;
        Ok(tape.value(y).clone())
    }
}

/// Score classifier: images to 11 label logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub params: ParamStore,
}

impl Classifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self, ModelError> {
        check_widths(&config.conv_widths, "classifier conv")?;
        check_widths(&config.fc_widths, "classifier fc")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = config.conv_widths;
        let chans = [1, c[0], c[1], c[2], c[3]];
        for i in 0..4 {
            add_layer(&mut params, &format!("d2/conv{i}"), &[chans[i + 1], chans[i], 3, 3], chans[i + 1], config.batchnorm, &mut rng);
        }
        let flat = c[3] * (IMAGE_SIZE / 4) * (IMAGE_SIZE / 4);
        let dims = [flat, config.fc_widths[0], config.fc_widths[1], NUM_LABELS];
        for i in 0..3 {
            add_layer(&mut params, &format!("d2/fc{i}"), &[dims[i + 1], dims[i]], dims[i + 1], false, &mut rng);
        }
        Ok(Self { config, params })
    }

    pub fn forward(&mut self, tape: &mut Tape<f32>, x: Var, mode: NormMode, trainable: bool) -> Result<Var, ModelError> {
        let (y, updates) = self.run(tape, x, mode, trainable)?;
        apply_updates(&mut self.params, updates);
        Ok(y)
    }

    /// Forward with every parameter held constant and running statistics
    /// left untouched, whatever the mode.
    pub fn forward_frozen(&self, tape: &mut Tape<f32>, x: Var, mode: NormMode) -> Result<Var, ModelError> {
        Ok(self.run(tape, x, mode, false)?.0)
    }

    fn run(&self, tape: &mut Tape<f32>, x: Var, mode: NormMode, trainable: bool) -> Result<(Var, Vec<(String, RunningStats<f32>)>), ModelError> {
        let n = expect_images(tape, x)?;
        let mut pass = Pass {
            store: &self.params,
            tape,
            mode,
            trainable,
            updates: Vec::new(),
        };
        let mut h = x;
        for i in 0..4 {
            let prefix = format!("d2/conv{i}");
            let w = pass.param(&format!("{prefix}/weight"));
            let b = pass.bias(&prefix);
            h = pass.tape.conv2d(h, w, b, 1, 1)?;
            h = pass.norm(h, &prefix)?;
            h = pass.tape.relu(h);
            if i % 2 == 1 {
                h = pass.tape.maxpool2d(h, 2, 2)?;
            }
        }
        let flat = pass.tape.shape(h)[1..].iter().product();
        h = pass.tape.reshape(h, &[n, flat])?;
        for i in 0..3 {
            let prefix = format!("d2/fc{i}");
            let w = pass.param(&format!("{prefix}/weight"));
            let b = pass.bias(&prefix);
            h = pass.tape.linear(h, w, b)?;
            if i < 2 {
                h = pass.tape.relu(h);
            }
        }
        Ok((h, pass.updates))
    }

    /// Eval-mode logits `[N, 11]`.
    pub fn logits(&self, images: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let (y, _) = self.run(&mut tape, x, NormMode::Eval, false)?;
        Ok(tape.value(y).clone())
    }

    /// Eval-mode arg-max labels, lowest label on ties.
    pub fn predict(&self, images: &Tensor<f32>) -> Result<Vec<usize>, ModelError> {
        let logits = self.logits(images)?;
        Ok(logits
            .data()
            .chunks(NUM_LABELS)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(0, |best, (k, &v)| if v > row[best] { k } else { best })
            })
            .collect())
    }
}

/// Scalar reduction of the classifier's 11-way output used in the
/// generator's classifier loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProxyKind {
    /// Softmax probability of the single-component label.
    #[default]
    TopLabel,
    /// Expected label divided by 10, `sum_k k p_k / 10`.
    ExpectedBin,
}

impl ProxyKind {
    pub fn name(self) -> &'static str {
        match self {
            ProxyKind::TopLabel => "top-label",
            ProxyKind::ExpectedBin => "expected-bin",
        }
    }
}

impl std::fmt::Display for ProxyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProxyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "top-label" => Ok(ProxyKind::TopLabel),
            "expected-bin" => Ok(ProxyKind::ExpectedBin),
            other => Err(format!("unknown proxy {other:?} (top-label|expected-bin)")),
        }
    }
}

/// Differentiable proxy `[N]` in `[0, 1]` from logits `[N, 11]`.
pub fn score_proxy(tape: &mut Tape<f32>, logits: Var, kind: ProxyKind) -> Result<Var, ModelError> {
    let n = tape.shape(logits)[0];
    let p = tape.softmax(logits, 1)?;
    Ok(match kind {
        ProxyKind::TopLabel => tape.column(p, TOP_LABEL as usize)?,
        ProxyKind::ExpectedBin => {
            let weights = Tensor::from_fn(&[1, NUM_LABELS], |k| k as f32 / f32::from(TOP_LABEL));
            let w = tape.constant(weights);
            let e = tape.linear(p, w, None)?;
            tape.reshape(e, &[n])?
        }
    })
}

/// Non-differentiable [`score_proxy`] on a logits tensor.
pub fn score_proxy_values(logits: &Tensor<f32>, kind: ProxyKind) -> Result<Vec<f32>, ModelError> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let p = score_proxy(&mut tape, l, kind)?;
    Ok(tape.value(p).data().to_vec())
}

/// `N(0, I)` noise `[n, latent_dim]`.
pub fn sample_noise(rng: &mut impl Rng, n: usize, latent_dim: usize) -> Tensor<f32> {
    Tensor::from_fn(&[n, latent_dim], |_| StandardNormal.sample(rng))
}

/// Stacks equally sized images into `[N,1,H,W]`.
pub fn images_to_tensor(images: &[&GrayImage]) -> Result<Tensor<f32>, ModelError> {
    let Some(first) = images.first() else {
        return Err(AutodiffError::shape("no images to stack").into());
    };
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(AutodiffError::shape("images differ in size").into());
        }
        data.extend_from_slice(img.pixels());
    }
    Ok(Tensor::new(&[images.len(), 1, h, w], data)?)
}

/// Splits `[N,1,H,W]` into images, clamping to `[0,1]`.
pub fn tensor_to_images(t: &Tensor<f32>) -> Result<Vec<GrayImage>, ModelError> {
    let &[_, 1, h, w] = t.shape() else {
        return Err(AutodiffError::shape(format!("expected [N,1,H,W], got {:?}", t.shape())).into());
    };
    t.data()
        .chunks(h * w)
        .map(|px| GrayImage::from_clamped(h, w, px.to_vec()).map_err(|e| ModelError::Config(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_g() -> GeneratorConfig {
        GeneratorConfig {
            latent_dim: 8,
            widths: [8, 8, 4, 4],
            batchnorm: true,
        }
    }

    #[test]
    fn default_generator_parameter_count() {
        let g = Generator::new(GeneratorConfig::default(), 0).unwrap();
        let c = [100usize, 512, 256, 128, 64, 1];
        let weights: usize = (0..5).map(|s| c[s] * c[s + 1] * 16).sum();
        let bn: usize = (1..5).map(|s| 2 * c[s]).sum();
        assert_eq!(g.params.trainable_count(), weights + bn + 1);
        assert_eq!(g.params.trainable_count(), 3_574_657);
    }

    #[test]
    fn names_follow_the_scheme() {
        let g = Generator::new(tiny_g(), 0).unwrap();
        let d = Discriminator::new(DiscriminatorConfig::default(), 0).unwrap();
        let c = Classifier::new(ClassifierConfig::default(), 0).unwrap();
        assert!(g.params.get("g/stage0/weight").is_some());
        assert!(g.params.get("g/stage4/bias").is_some());
        assert!(d.params.get("d1/stage3/bn/gamma").is_some());
        assert!(d.params.get("d1/stage0/bn/gamma").is_none());
        assert!(c.params.get("d2/fc2/bias").is_some());
        assert_eq!(c.params.get("d2/fc2/weight").unwrap().shape(), &[11, 64]);
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let a = Generator::new(tiny_g(), 3).unwrap();
        let b = Generator::new(tiny_g(), 3).unwrap();
        let c = Generator::new(tiny_g(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for p in a.params.iter() {
            if p.name.ends_with("bias") || p.name.ends_with("beta") || p.name.ends_with("running_mean") {
                assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name);
            }
        }
        let w = a.params.get("g/stage1/weight").unwrap().data();
        let mean = w.iter().sum::<f32>() / w.len() as f32;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / w.len() as f32).sqrt();
        assert!(mean.abs() < 0.01 && (std - 0.02).abs() < 0.005, "mean {mean} std {std}");
    }

    #[test]
    fn proxy_closed_forms() {
        let uniform = Tensor::zeros(&[2, 11]);
        for v in score_proxy_values(&uniform, ProxyKind::TopLabel).unwrap() {
            assert!((v - 1.0 / 11.0).abs() < 1e-7);
        }
        for v in score_proxy_values(&uniform, ProxyKind::ExpectedBin).unwrap() {
            assert!((v - 0.5).abs() < 1e-6);
        }
        let mut hot = vec![0.0f32; 11];
        hot[10] = 1e4;
        let hot = Tensor::new(&[1, 11], hot).unwrap();
        assert!((score_proxy_values(&hot, ProxyKind::TopLabel).unwrap()[0] - 1.0).abs() < 1e-6);
        assert!((score_proxy_values(&hot, ProxyKind::ExpectedBin).unwrap()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(Generator::new(GeneratorConfig { latent_dim: 0, ..tiny_g() }, 0).is_err());
        let cfg = DiscriminatorConfig {
            widths: [0, 1, 1, 1],
            ..DiscriminatorConfig::default()
        };
        assert!(Discriminator::new(cfg, 0).is_err());
    }
}
