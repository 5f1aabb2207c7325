use rand::seq::SliceRandom;
use rand::Rng;

use super::{stream_rng, stream_seed, BatchSampler, Stream, TrainError};
use crate::autodiff::{AdamState, NormMode, Tape};
use crate::dataset::Dataset;
use crate::models::{images_to_tensor, Classifier, ClassifierConfig};
use crate::topology::GrayImage;

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub seed: u64,
    pub val_fraction: f64,
    /// Stop once held-out top-1 reaches this.
    pub target_top1: Option<f64>,
    /// Validation every this many iterations (and at the end).
    pub eval_every: usize,
    /// Apply a random flip or rotation to each training image.
    pub augment: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            iterations: 15_000,
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            val_fraction: 0.1,
            target_top1: None,
            eval_every: 500,
            augment: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyPoint {
    pub iteration: usize,
    /// Mean training loss since the previous point.
    pub train_loss: f64,
    pub top1: f64,
    pub within_one: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    /// Training loss of every iteration.
    pub losses: Vec<f32>,
    pub curve: Vec<AccuracyPoint>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub stopped_early: bool,
}

impl PretrainReport {
    pub fn final_point(&self) -> Option<&AccuracyPoint> {
        self.curve.last()
    }
}

/// Seeded shuffle split: `(train, validation)`, validation holding
/// `ceil(n * fraction)` indices.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Split));
    let n_val = ((n as f64) * fraction.clamp(0.0, 1.0)).ceil() as usize;
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val_sorted = val;
    val_sorted.sort_unstable();
    (train, val_sorted)
}

/// Eval-mode `(top-1, within-one-bin)` accuracy.
pub fn accuracy(clf: &Classifier, images: &[&GrayImage], labels: &[u8]) -> Result<(f64, f64), TrainError> {
    assert_eq!(images.len(), labels.len());
    if images.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (mut top1, mut near) = (0usize, 0usize);
    for (chunk, lab) in images.chunks(128).zip(labels.chunks(128)) {
        let pred = clf.predict(&images_to_tensor(chunk)?)?;
        for (p, &l) in pred.iter().zip(lab) {
            top1 += usize::from(*p == l as usize);
            near += usize::from(p.abs_diff(l as usize) <= 1);
        }
    }
    let n = images.len() as f64;
    Ok((top1 as f64 / n, near as f64 / n))
}

/// Minimizes cross-entropy between classifier logits and the manifest's
/// score labels on a seeded 90/10 split.
pub fn pretrain_classifier(
    data: &Dataset,
    cfg: &PretrainConfig,
    arch: ClassifierConfig,
) -> Result<(Classifier, PretrainReport), TrainError> {
    pretrain_classifier_observed(data, cfg, arch, |_| {})
}

/// [`pretrain_classifier`] calling `on_point` after every validation pass.
pub fn pretrain_classifier_observed(
    data: &Dataset,
    cfg: &PretrainConfig,
    arch: ClassifierConfig,
    mut on_point: impl FnMut(&AccuracyPoint),
) -> Result<(Classifier, PretrainReport), TrainError> {
    if cfg.batch_size < 2 || cfg.eval_every == 0 {
        return Err(TrainError::Config("batch_size must be >= 2 and eval_every positive".into()));
    }
    let need = 10 * cfg.batch_size;
    if data.len() < need {
        return Err(TrainError::DataTooSmall { have: data.len(), need });
    }
    let labels = data.manifest.labels();
    let (train_idx, val_idx) = split_indices(data.len(), cfg.val_fraction, cfg.seed);
    let val_images: Vec<&GrayImage> = val_idx.iter().map(|&i| &data.images[i]).collect();
    let val_labels: Vec<u8> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut clf = Classifier::new(arch, stream_seed(cfg.seed, Stream::InitD2))?;
    let mut opt = AdamState::new(cfg.lr, cfg.beta1, cfg.beta2, 1e-8);
    let mut sampler = BatchSampler::new(train_idx.clone(), stream_seed(cfg.seed, Stream::Data));
    let mut report = PretrainReport {
        losses: Vec::with_capacity(cfg.iterations),
        curve: Vec::new(),
        train_indices: train_idx,
        val_indices: val_idx,
        stopped_early: false,
    };
    let mut aug_rng = stream_rng(cfg.seed, Stream::Augment);
    let mut window = 0.0f64;
    let mut window_len = 0usize;
    for it in 1..=cfg.iterations {
        let batch = sampler.next_batch(cfg.batch_size);
        let transformed: Vec<GrayImage>;
        let imgs: Vec<&GrayImage> = if cfg.augment {
            transformed = batch.iter().map(|&i| data.images[i].dihedral(aug_rng.random_range(0..8))).collect();
            transformed.iter().collect()
        } else {
            batch.iter().map(|&i| &data.images[i]).collect()
        };
        let targets: Vec<usize> = batch.iter().map(|&i| labels[i] as usize).collect();
        let mut tape = Tape::new();
        let x = tape.constant(images_to_tensor(&imgs)?);
        let logits = clf.forward(&mut tape, x, NormMode::Train, true)?;
        let loss = tape.cross_entropy(logits, &targets)?;
        tape.backward(loss)?;
        clf.params.adam_step(&tape, &mut opt)?;
        let l = tape.value(loss).item();
        report.losses.push(l);
        window += l as f64;
        window_len += 1;

        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let (top1, within_one) = accuracy(&clf, &val_images, &val_labels)?;
            report.curve.push(AccuracyPoint {
                iteration: it,
                train_loss: window / window_len as f64,
                top1,
                within_one,
            });
            on_point(report.curve.last().expect("just pushed"));
            window = 0.0;
            window_len = 0;
            if cfg.target_top1.is_some_and(|t| top1 >= t) {
                report.stopped_early = it < cfg.iterations;
                break;
            }
        }
    }
    Ok((clf, report))
}
