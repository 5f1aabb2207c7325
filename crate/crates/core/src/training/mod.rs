//! Classifier pretraining, the DCGAN baseline and RegGAN.
//!
//! One iteration is one minibatch step. Every random draw comes from a
//! stream derived from the run seed, so a run is a pure function of its
//! config and data.

mod gan;
mod metrics;
mod pretrain;

pub use gan::{
    classifier_finetune_step, dcgan_step, evaluate_generator, reggan_phase2, train, train_observed, GanArch, GanState, Optimizers,
    StepLosses, TrainOutcome, CHECKPOINT_FILES,
};
pub use metrics::{parse_metrics, write_metrics_header, MetricsRow, METRICS_FILE, METRICS_HEADER};
pub use pretrain::{accuracy, pretrain_classifier, pretrain_classifier_observed, split_indices, AccuracyPoint, PretrainConfig, PretrainReport};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Checkpoint};
use crate::dataset::{derive_seed, DatasetError};
use crate::models::{ModelError, ProxyKind};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset too small: {have} images, need at least {need}")]
    DataTooSmall { have: usize, need: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("metrics format error on line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pipeline {
    Dcgan,
    Reggan,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Dcgan => "dcgan",
            Pipeline::Reggan => "reggan",
        }
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Pipeline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dcgan" => Ok(Pipeline::Dcgan),
            "reggan" => Ok(Pipeline::Reggan),
            other => Err(format!("unknown pipeline {other:?} (dcgan|reggan)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr_d1: f32,
    pub lr_g_adv: f32,
    pub lr_g_cls: f32,
    pub lr_cls_finetune: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_eps: f32,
    pub seed: u64,
    /// Metrics row every this many iterations.
    pub eval_every: usize,
    /// Generated images scored per metrics row.
    pub eval_batch: usize,
    /// Fine-tune the classifier on generated images (otherwise it is frozen).
    pub update_classifier: bool,
    /// 0 writes checkpoints only at the end.
    pub checkpoint_every: usize,
    pub proxy: ProxyKind,
    /// Phase 2 reuses the noise of the adversarial generator step instead of
    /// drawing its own.
    pub reuse_phase1_noise: bool,
    pub alpha: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            iterations: 10_000,
            lr_d1: 2e-4,
            lr_g_adv: 2e-4,
            lr_g_cls: 5e-5,
            lr_cls_finetune: 1e-5,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            eval_every: 1,
            eval_batch: 64,
            update_classifier: false,
            checkpoint_every: 0,
            proxy: ProxyKind::TopLabel,
            reuse_phase1_noise: false,
            alpha: crate::topology::ScoreConfig::DEFAULT_ALPHA,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size {} < 2 (batch norm needs two samples)", self.batch_size));
        }
        if self.eval_every == 0 || self.eval_batch < 2 {
            return bad("eval_every must be positive and eval_batch at least 2".into());
        }
        for (name, lr) in [
            ("lr_d1", self.lr_d1),
            ("lr_g_adv", self.lr_g_adv),
            ("lr_g_cls", self.lr_g_cls),
            ("lr_cls_finetune", self.lr_cls_finetune),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Random streams of a run, each derived from the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    InitG = 1,
    InitD1 = 2,
    InitD2 = 3,
    Data = 10,
    Noise = 11,
    ClassifierNoise = 12,
    Eval = 13,
    Split = 14,
    Augment = 15,
}

pub fn stream_seed(seed: u64, stream: Stream) -> u64 {
    derive_seed(seed, stream as u64, 0)
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream))
}

/// Epoch-shuffled minibatches over a fixed index pool.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(pool: Vec<usize>, seed: u64) -> Self {
        Self {
            order: Vec::new(),
            pos: 0,
            pool,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Next `n` indices; a fresh permutation starts whenever the current
    /// one runs out.
    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order = self.pool.clone();
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            let take = (n - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// Writes through a temporary file and a rename so an interrupted run
/// never leaves a torn checkpoint.
pub fn save_checkpoint_atomic(ck: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    std::fs::write(&tmp, ck.encode()?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = BatchSampler::new((0..10).collect(), 3);
        let mut first: Vec<usize> = s.next_batch(4);
        first.extend(s.next_batch(6));
        first.sort();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        assert_eq!(s.next_batch(25).len(), 25);
        let mut a = BatchSampler::new((0..10).collect(), 3);
        let mut b = BatchSampler::new((0..10).collect(), 3);
        assert_eq!(a.next_batch(13), b.next_batch(13));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr_d1: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr_g_cls: 0.0, ..TrainConfig::default() }.validate().is_ok());
    }

    #[test]
    fn streams_are_distinct() {
        let seeds: Vec<u64> = [Stream::Data, Stream::Noise, Stream::ClassifierNoise, Stream::Eval]
            .iter()
            .map(|&s| stream_seed(5, s))
            .collect();
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_eq!("reggan".parse::<Pipeline>(), Ok(Pipeline::Reggan));
        assert!("wgan".parse::<Pipeline>().is_err());
    }
}
