mod common;

use std::sync::OnceLock;

use reggan::autodiff::{AdamState, Tensor};
use reggan::dataset::{generate_dataset, BlobConfig, Dataset};
use reggan::models::{
    sample_noise, Classifier, ClassifierConfig, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ParamStore,
    ProxyKind,
};
use reggan::topology::{score_label_or_zero, ScoreConfig};
use reggan::training::*;

fn toy_data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        generate_dataset(&BlobConfig {
            count: 200,
            master_seed: 11,
            stratify_labels: true,
            ..BlobConfig::default()
        })
        .unwrap()
    })
}

fn tiny_arch() -> GanArch {
    GanArch {
        g: GeneratorConfig {
            latent_dim: 8,
            widths: [8, 8, 4, 4],
            batchnorm: true,
        },
        d1: DiscriminatorConfig {
            widths: [4, 4, 8, 8],
            ..DiscriminatorConfig::default()
        },
    }
}

fn tiny_classifier_config() -> ClassifierConfig {
    ClassifierConfig {
        conv_widths: [4, 4, 4, 4],
        fc_widths: [16, 16],
        batchnorm: true,
    }
}

fn tiny_cfg(iterations: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        iterations,
        eval_batch: 8,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn trainable_bytes(store: &ParamStore) -> Vec<u32> {
    store
        .iter()
        .filter(|p| p.trainable)
        .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
        .collect()
}

fn pretrain_cfg(iterations: usize) -> PretrainConfig {
    PretrainConfig {
        batch_size: 16,
        iterations,
        seed: 5,
        eval_every: 100,
        ..PretrainConfig::default()
    }
}

#[test]
fn pretraining_beats_uniform_guessing() {
    let (_, report) = pretrain_classifier(toy_data(), &pretrain_cfg(500), tiny_classifier_config()).unwrap();
    assert_eq!(report.losses.len(), 500);
    let tail = &report.losses[450..];
    let mean = tail.iter().sum::<f32>() / tail.len() as f32;
    assert!(mean < 11f32.ln(), "tail loss {mean}");
    assert_eq!(report.val_indices.len(), 20);
    assert_eq!(report.curve.len(), 5);
    let p = report.final_point().unwrap();
    assert!((0.0..=1.0).contains(&p.top1) && p.within_one >= p.top1);
}

#[test]
fn pretraining_is_deterministic() {
    let a = pretrain_classifier(toy_data(), &pretrain_cfg(30), tiny_classifier_config()).unwrap();
    let b = pretrain_classifier(toy_data(), &pretrain_cfg(30), tiny_classifier_config()).unwrap();
    assert_eq!(a.1.losses, b.1.losses);
    assert_eq!(a.0, b.0);
}

#[test]
fn pretraining_needs_ten_batches() {
    let cfg = PretrainConfig {
        batch_size: 64,
        ..pretrain_cfg(10)
    };
    assert!(matches!(
        pretrain_classifier(toy_data(), &cfg, tiny_classifier_config()),
        Err(TrainError::DataTooSmall { have: 200, need: 640 })
    ));
}

#[test]
fn split_is_seeded_and_disjoint() {
    let (t, v) = split_indices(100, 0.1, 4);
    assert_eq!((t.len(), v.len()), (90, 10));
    assert!(v.iter().all(|i| !t.contains(i)));
    assert_eq!(split_indices(100, 0.1, 4), (t.clone(), v.clone()));
    assert_ne!(split_indices(100, 0.1, 5).1, v);
}

#[test]
fn zero_learning_rates_freeze_dcgan() {
    let arch = tiny_arch();
    let mut g = Generator::new(arch.g.clone(), 1).unwrap();
    let mut d1 = Discriminator::new(arch.d1.clone(), 2).unwrap();
    let (g0, d0) = (trainable_bytes(&g.params), trainable_bytes(&d1.params));
    let mut og = AdamState::new(0.0, 0.5, 0.999, 1e-8);
    let mut od = AdamState::new(0.0, 0.5, 0.999, 1e-8);
    let real = reggan::models::images_to_tensor(&toy_data().images[..8].iter().collect::<Vec<_>>()).unwrap();
    let mut rng = common::rng(1);
    for _ in 0..3 {
        dcgan_step(&mut g, &mut d1, &real, &mut og, &mut od, &mut rng).unwrap();
    }
    assert_eq!(trainable_bytes(&g.params), g0);
    assert_eq!(trainable_bytes(&d1.params), d0);
}

#[test]
fn initial_discriminator_loss_is_two_ln_two() {
    let mut state = GanState::new(Pipeline::Dcgan, &tiny_cfg(1), &tiny_arch(), None, toy_data().len()).unwrap();
    let l = state.step(toy_data()).unwrap();
    assert!((l.loss_d1 - 2.0 * 2f32.ln()).abs() < 0.05, "{}", l.loss_d1);
    assert!(l.loss_g_cls.is_nan());
}

#[test]
fn hundred_dcgan_steps_stay_finite() {
    let out = train(Pipeline::Dcgan, toy_data(), &tiny_cfg(100), &tiny_arch(), None, None).unwrap();
    assert!(out.losses.iter().all(|l| l.loss_d1.is_finite() && l.loss_g_adv.is_finite()));
    assert!(out.metrics.iter().all(|r| (0.0..=1.0).contains(&r.mean_score)));
    assert_eq!(out.metrics.len(), 100);
}

fn tiny_classifier() -> Classifier {
    Classifier::new(tiny_classifier_config(), 9).unwrap()
}

#[test]
fn frozen_classifier_is_bit_identical() {
    let d2 = tiny_classifier();
    let before = d2.params.to_checkpoint().encode().unwrap();
    let out = train(Pipeline::Reggan, toy_data(), &tiny_cfg(15), &tiny_arch(), Some(d2), None).unwrap();
    let after = out.state.d2.unwrap().params.to_checkpoint().encode().unwrap();
    assert_eq!(before, after);
    assert!(out.losses.iter().all(|l| l.loss_g_cls.is_finite()));
}

#[test]
fn zero_classifier_rate_reduces_to_dcgan() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("dcgan"), dir.path().join("reggan"));
    let cfg = TrainConfig {
        lr_g_cls: 0.0,
        eval_every: 5,
        ..tiny_cfg(20)
    };
    let da = train(Pipeline::Dcgan, toy_data(), &cfg, &tiny_arch(), None, Some(&a)).unwrap();
    let db = train(Pipeline::Reggan, toy_data(), &cfg, &tiny_arch(), Some(tiny_classifier()), Some(&b)).unwrap();
    for f in ["g.ckpt", "d1.ckpt", "g_opt.ckpt", "d1_opt.ckpt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    for (x, y) in da.losses.iter().zip(&db.losses) {
        assert_eq!((x.loss_d1, x.loss_g_adv), (y.loss_d1, y.loss_g_adv));
    }
    for (x, y) in da.metrics.iter().zip(&db.metrics) {
        assert_eq!(x.mean_score, y.mean_score);
    }
}

#[test]
fn classifier_phase_alone_lowers_its_loss() {
    let arch = tiny_arch();
    let mut g = Generator::new(arch.g.clone(), 4).unwrap();
    let d2 = tiny_classifier();
    let mut opt = AdamState::new(1e-3, 0.5, 0.999, 1e-8);
    let mut rng = common::rng(2);
    let mut losses = Vec::new();
    for _ in 0..50 {
        let z = sample_noise(&mut rng, 8, arch.g.latent_dim);
        losses.push(reggan_phase2(&mut g, &d2, z, ProxyKind::TopLabel, &mut opt).unwrap().0);
    }
    let head = losses[..5].iter().sum::<f32>() / 5.0;
    let tail = losses[45..].iter().sum::<f32>() / 5.0;
    assert!(tail < head, "{head} -> {tail}");

    let mut opt = AdamState::new(1e-3, 0.5, 0.999, 1e-8);
    let z = sample_noise(&mut rng, 8, arch.g.latent_dim);
    let (l, _) = reggan_phase2(&mut g, &d2, z, ProxyKind::ExpectedBin, &mut opt).unwrap();
    assert!((0.0..=1.0).contains(&l));
}

#[test]
fn finetune_uses_exact_labels_and_respects_zero_rate() {
    let mut d2 = tiny_classifier();
    let before = d2.params.to_checkpoint().encode().unwrap();
    let imgs: Vec<_> = toy_data().images[..8].iter().collect();
    let x = reggan::models::images_to_tensor(&imgs).unwrap();
    let cfg = ScoreConfig::default();
    let mut opt = AdamState::new(0.0, 0.5, 0.999, 1e-8);
    let (_, labels) = classifier_finetune_step(&mut d2, &x, &cfg, &mut opt).unwrap();
    let expect: Vec<u8> = imgs.iter().map(|i| score_label_or_zero(i, &cfg)).collect();
    assert_eq!(labels, expect);
    assert_eq!(d2.params.to_checkpoint().encode().unwrap(), before);

    let blank = Tensor::zeros(&[2, 1, 64, 64]);
    let (_, labels) = classifier_finetune_step(&mut d2, &blank, &cfg, &mut opt).unwrap();
    assert_eq!(labels, vec![0, 0]);

    let mut opt = AdamState::new(1e-3, 0.5, 0.999, 1e-8);
    classifier_finetune_step(&mut d2, &x, &cfg, &mut opt).unwrap();
    assert_ne!(d2.params.to_checkpoint().encode().unwrap(), before);
}

#[test]
fn run_bookkeeping() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        eval_every: 2,
        update_classifier: true,
        ..tiny_cfg(10)
    };
    let out = train(Pipeline::Reggan, toy_data(), &cfg, &tiny_arch(), Some(tiny_classifier()), Some(dir.path())).unwrap();
    assert_eq!(out.metrics.len(), 5);
    let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let rows = parse_metrics(&text).unwrap();
    assert_eq!(rows.iter().map(|r| r.iter).collect::<Vec<_>>(), vec![2, 4, 6, 8, 10]);
    for f in CHECKPOINT_FILES {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let snap = std::fs::read_to_string(dir.path().join("run.json")).unwrap();
    assert!(snap.contains("pipeline=reggan\n") && snap.contains("update_classifier=true\n"));
    assert!(snap.lines().all(|l| l.split_once('=').is_some()));
    assert!(out.losses.iter().all(|l| l.loss_d2.is_finite()));
    let ck = reggan::autodiff::read_checkpoint(&dir.path().join("g.ckpt")).unwrap();
    let mut g = Generator::new(tiny_arch().g, 0).unwrap();
    g.params.load_checkpoint(&ck).unwrap();
    assert_eq!(g.params, out.state.g.params);
}

#[test]
fn runs_are_deterministic() {
    let cfg = tiny_cfg(6);
    let a = train(Pipeline::Reggan, toy_data(), &cfg, &tiny_arch(), Some(tiny_classifier()), None).unwrap();
    let b = train(Pipeline::Reggan, toy_data(), &cfg, &tiny_arch(), Some(tiny_classifier()), None).unwrap();
    let bits = |o: &TrainOutcome| -> Vec<u64> {
        o.losses
            .iter()
            .flat_map(|l| [l.loss_d1, l.loss_g_adv, l.loss_g_cls, l.loss_d2])
            .map(f64::from)
            .chain(o.metrics.iter().flat_map(|r| [r.mean_score, r.mean_proxy]))
            .map(f64::to_bits)
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn reggan_requires_a_classifier() {
    assert!(matches!(
        train(Pipeline::Reggan, toy_data(), &tiny_cfg(1), &tiny_arch(), None, None),
        Err(TrainError::Config(_))
    ));
}
