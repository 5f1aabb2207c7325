use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use reggan::autodiff::{op_suite, read_checkpoint, write_checkpoint, AutodiffError, NormMode, SUITE_TOLERANCE};
use reggan::dataset::pgm::import_pgm;
use reggan::dataset::{decode_pixels, generate_dataset, load_dataset_with, save_dataset, BlobConfig, DatasetError, DATA_FILE};
use reggan::eval::{compare_runs, render_montage, score_trend, EvalError};
use reggan::models::{
    sample_noise, tensor_to_images, Classifier, ClassifierConfig, DiscriminatorConfig, Generator, GeneratorConfig,
    ModelError, ProxyKind,
};
use reggan::topology::{self, component_count, GrayImage, ScoreConfig, TopologyError};
use reggan::training::{
    parse_metrics, pretrain_classifier_observed, stream_rng, train_observed, GanArch, Pipeline, PretrainConfig, Stream,
    TrainConfig, TrainError, METRICS_FILE,
};

use crate::settings::Settings;
use crate::{Command, CliError, EvalArgs, GenDataArgs, GradcheckArgs, PretrainArgs, RenderArgs, ScoreArgs, TrainArgs};

/// Resolved settings of a run, written next to its outputs.
pub const SNAPSHOT_FILE: &str = "config.txt";

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Dataset(d) => d.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn score_config(s: &mut Settings) -> Result<ScoreConfig, CliError> {
    let alpha = s.get("alpha", ScoreConfig::DEFAULT_ALPHA)?;
    ScoreConfig::new(alpha).map_err(|e| CliError::Usage(e.to_string()))
}

/// `FILE` plus `suffix`, for files that accompany a single output file.
fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", out.display()))
}

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Score(a) => score(a),
        Command::Render(a) => render(a),
        Command::PretrainClassifier(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("out", a.out);
    s.flag("count", a.count);
    s.flag("seed", a.seed);
    s.flag("min_comp", a.min_comp);
    s.flag("max_comp", a.max_comp);
    s.switch("stratify", a.stratify);

    let out: PathBuf = s.require::<String>("out")?.into();
    let d = BlobConfig::default();
    let min_components = s.get("min_comp", d.min_components)?;
    let max_components = s.get("max_comp", d.max_components)?;
    let cfg = BlobConfig {
        count: s.get("count", d.count)?,
        master_seed: s.get("seed", d.master_seed)?,
        min_components,
        max_components,
        stratify_labels: s.get("stratify", false)?,
        size: s.get("size", d.size)?,
        circles_min: s.get("circles_min", d.circles_min.max(min_components))?,
        circles_max: s.get("circles_max", d.circles_max.max(max_components))?,
        radius_min: s.get("radius_min", d.radius_min)?,
        radius_max: s.get("radius_max", d.radius_max)?,
        sigma_min: s.get("sigma_min", d.sigma_min)?,
        sigma_max: s.get("sigma_max", d.sigma_max)?,
        dominant_prob: s.get("dominant_prob", d.dominant_prob)?,
        dominant_scale: s.get("dominant_scale", d.dominant_scale)?,
        stratify_dominant_max: s.get("stratify_dominant_max", d.stratify_dominant_max)?,
        alpha: s.get("alpha", d.alpha)?,
    };
    s.finish()?;
    cfg.validate()?;
    let ds = generate_dataset(&cfg)?;
    save_dataset(&ds, &out)?;
    s.write_snapshot(&out.join(SNAPSHOT_FILE))?;
    let hist = ds.manifest.label_histogram();
    println!("wrote {} images to {}", ds.len(), out.display());
    println!("label histogram: {}", hist.map(|c| c.to_string()).join(" "));
    Ok(())
}

/// Images behind one `score` argument: a PGM file or every image of a
/// dataset directory.
fn images_at(path: &Path) -> Result<Vec<(String, GrayImage)>, CliError> {
    if path.is_dir() {
        let file = path.join(DATA_FILE);
        let bytes = std::fs::read(&file).map_err(io_err(&file))?;
        let imgs = decode_pixels(&bytes)?;
        Ok(imgs
            .into_iter()
            .enumerate()
            .map(|(i, img)| (format!("{}#{i}", path.display()), img))
            .collect())
    } else {
        Ok(vec![(path.display().to_string(), import_pgm(path)?)])
    }
}

fn score(a: ScoreArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("alpha", a.alpha);
    s.switch("csv", a.csv);
    let cfg = score_config(&mut s)?;
    let csv = s.get("csv", false)?;
    s.finish()?;

    let mut items = Vec::new();
    for p in &a.paths {
        items.extend(images_at(p)?);
    }
    let single = items.len() == 1;
    let mut out = String::new();
    if csv {
        out.push_str("path,score,label,components\n");
    }
    let mut blank = Vec::new();
    for (name, img) in &items {
        match topology::score(img, &cfg) {
            Ok(v) if csv => {
                let _ = writeln!(out, "{name},{v:.6},{},{}", topology::score_label_or_zero(img, &cfg), component_count(img, &cfg));
            }
            Ok(v) if single => {
                let _ = writeln!(out, "{v:.6}");
            }
            Ok(v) => {
                let _ = writeln!(out, "{name} {v:.6}");
            }
            Err(TopologyError::EmptyForeground) => blank.push(name.clone()),
            Err(e) => return Err(CliError::Data(format!("{name}: {e}"))),
        }
    }
    print!("{out}");
    if blank.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "no foreground at alpha {} in: {}",
            cfg.alpha(),
            blank.join(", ")
        )))
    }
}

fn render(a: RenderArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("in", a.input);
    s.flag("out", a.out);
    s.switch("recolor", a.recolor);
    let input: PathBuf = s.require::<String>("in")?.into();
    let out: PathBuf = s.require::<String>("out")?.into();
    let recolor = s.get("recolor", false)?;
    let cfg = score_config(&mut s)?;
    let count = s.get("count", 16usize)?;
    if count == 0 {
        return Err(CliError::Usage("count must be positive".into()));
    }

    let images: Vec<GrayImage> = if input.join("g.ckpt").is_file() {
        let seed = s.get("seed", 0u64)?;
        s.finish()?;
        if count < 2 {
            return Err(CliError::Usage("sampling a generator needs count >= 2".into()));
        }
        let ck = read_checkpoint(&input.join("g.ckpt"))?;
        let mut g = Generator::new(GeneratorConfig::from_checkpoint(&ck)?, 0)?;
        g.params.load_checkpoint(&ck)?;
        let z = sample_noise(&mut stream_rng(seed, Stream::Eval), count, g.config.latent_dim);
        tensor_to_images(&g.generate_with(&z, NormMode::TrainFrozenStats)?)?
    } else {
        s.finish()?;
        let mut imgs: Vec<GrayImage> = images_at(&input)?.into_iter().map(|(_, i)| i).collect();
        imgs.truncate(count);
        imgs
    };
    let refs: Vec<&GrayImage> = images.iter().collect();
    let m = render_montage(&refs, &out, recolor, &cfg)?;
    s.write_snapshot(&sidecar(&out, ".config.txt"))?;
    println!("wrote {}x{} montage of {} images to {}", m.height(), m.width(), refs.len(), out.display());
    Ok(())
}

fn classifier_config(s: &mut Settings) -> Result<ClassifierConfig, CliError> {
    let d = ClassifierConfig::default();
    Ok(ClassifierConfig {
        conv_widths: s.array("d2_conv_widths", d.conv_widths)?,
        fc_widths: s.array("d2_fc_widths", d.fc_widths)?,
        batchnorm: s.get("d2_batchnorm", d.batchnorm)?,
    })
}

fn pretrain(a: PretrainArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("data", a.data);
    s.flag("out", a.out);
    s.flag("iters", a.iters);
    s.flag("target_acc", a.target_acc);
    let data: PathBuf = s.require::<String>("data")?.into();
    let out: PathBuf = s.require::<String>("out")?.into();
    let d = PretrainConfig::default();
    let cfg = PretrainConfig {
        iterations: s.get("iters", d.iterations)?,
        target_top1: s.optional("target_acc")?,
        batch_size: s.get("batch_size", d.batch_size)?,
        lr: s.get("lr", d.lr)?,
        beta1: s.get("beta1", d.beta1)?,
        beta2: s.get("beta2", d.beta2)?,
        seed: s.get("seed", d.seed)?,
        val_fraction: s.get("val_fraction", d.val_fraction)?,
        eval_every: s.get("eval_every", d.eval_every)?,
        augment: s.get("augment", d.augment)?,
    };
    let arch = classifier_config(&mut s)?;
    let score_cfg = score_config(&mut s)?;
    s.finish()?;

    let ds = load_dataset_with(&data, &score_cfg)?;
    let (clf, report) = pretrain_classifier_observed(&ds, &cfg, arch, |p| {
        eprintln!(
            "iter {:>6}  loss {:.4}  top1 {:.4}  within-one {:.4}",
            p.iteration, p.train_loss, p.top1, p.within_one
        );
    })?;
    write_checkpoint(&clf.params.to_checkpoint(), &out)?;
    let mut curve = String::from("iteration,train_loss,top1,within_one\n");
    for p in &report.curve {
        let _ = writeln!(curve, "{},{:.6},{:.6},{:.6}", p.iteration, p.train_loss, p.top1, p.within_one);
    }
    let curve_path = sidecar(&out, ".curve.csv");
    std::fs::write(&curve_path, curve).map_err(io_err(&curve_path))?;
    s.write_snapshot(&sidecar(&out, ".config.txt"))?;
    if let Some(p) = report.final_point() {
        println!(
            "held-out top1 {:.4}, within-one {:.4} after {} iterations{}",
            p.top1,
            p.within_one,
            p.iteration,
            if report.stopped_early { " (target reached)" } else { "" }
        );
    }
    Ok(())
}

fn load_classifier(path: &Path) -> Result<Classifier, CliError> {
    let ck = read_checkpoint(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut clf = Classifier::new(ClassifierConfig::from_checkpoint(&ck)?, 0)?;
    clf.params.load_checkpoint(&ck)?;
    Ok(clf)
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("pipeline", a.pipeline);
    s.flag("data", a.data);
    s.flag("classifier", a.classifier);
    s.flag("out", a.out);
    s.flag("iters", a.iters);
    s.flag("seed", a.seed);
    s.flag("lr_g_cls", a.lr_g_cls);
    s.switch("update_classifier", a.update_classifier);

    let pipeline: Pipeline = s.require("pipeline")?;
    let data: PathBuf = s.require::<String>("data")?.into();
    let classifier: Option<String> = s.optional("classifier")?;
    let out: PathBuf = s.require::<String>("out")?.into();
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        iterations: s.get("iters", d.iterations)?,
        seed: s.get("seed", d.seed)?,
        lr_g_cls: s.get("lr_g_cls", d.lr_g_cls)?,
        update_classifier: s.get("update_classifier", d.update_classifier)?,
        batch_size: s.get("batch_size", d.batch_size)?,
        lr_d1: s.get("lr_d1", d.lr_d1)?,
        lr_g_adv: s.get("lr_g_adv", d.lr_g_adv)?,
        lr_cls_finetune: s.get("lr_cls_finetune", d.lr_cls_finetune)?,
        beta1: s.get("beta1", d.beta1)?,
        beta2: s.get("beta2", d.beta2)?,
        adam_eps: s.get("adam_eps", d.adam_eps)?,
        eval_every: s.get("eval_every", d.eval_every)?,
        eval_batch: s.get("eval_batch", d.eval_batch)?,
        checkpoint_every: s.get("checkpoint_every", d.checkpoint_every)?,
        proxy: s.get::<ProxyKind>("proxy", d.proxy)?,
        reuse_phase1_noise: s.get("reuse_phase1_noise", d.reuse_phase1_noise)?,
        alpha: s.get("alpha", d.alpha)?,
    };
    let (dg, dd) = (GeneratorConfig::default(), DiscriminatorConfig::default());
    let arch = GanArch {
        g: GeneratorConfig {
            latent_dim: s.get("latent_dim", dg.latent_dim)?,
            widths: s.array("g_widths", dg.widths)?,
            batchnorm: s.get("g_batchnorm", dg.batchnorm)?,
        },
        d1: DiscriminatorConfig {
            widths: s.array("d1_widths", dd.widths)?,
            slope: s.get("d1_slope", dd.slope)?,
            batchnorm: s.get("d1_batchnorm", dd.batchnorm)?,
        },
    };
    let log_every = s.get("log_every", 100usize)?.max(1);
    s.finish()?;
    if pipeline == Pipeline::Reggan && classifier.is_none() {
        return Err(CliError::Usage("--pipeline reggan needs --classifier".into()));
    }
    cfg.validate()?;

    let score_cfg = ScoreConfig::new(cfg.alpha).map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = load_dataset_with(&data, &score_cfg)?;
    let d2 = classifier.as_deref().map(|p| load_classifier(Path::new(p))).transpose()?;
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    s.write_snapshot(&out.join(SNAPSHOT_FILE))?;
    let outcome = train_observed(pipeline, &ds, &cfg, &arch, d2, Some(&out), |r| {
        if r.iter % log_every == 0 {
            eprintln!(
                "iter {:>6}  d1 {:.4}  g_adv {:.4}  g_cls {:.4}  score {:.4}  proxy {:.4}  label10 {:.3}",
                r.iter, r.loss_d1, r.loss_g_adv, r.loss_g_cls, r.mean_score, r.mean_proxy, r.frac_label10
            );
        }
    })?;
    let last = outcome.metrics.last();
    println!(
        "{} finished {} iterations; last mean score {}",
        pipeline,
        outcome.state.iteration,
        last.map_or("n/a".into(), |r| format!("{:.4}", r.mean_score))
    );
    Ok(())
}

fn read_run(arg: &str) -> Result<Vec<reggan::training::MetricsRow>, CliError> {
    let p = Path::new(arg);
    let file = if p.is_dir() { p.join(METRICS_FILE) } else { p.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
    let rows = parse_metrics(&text).map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{}: no metrics rows", file.display())));
    }
    Ok(rows)
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.flag("run_a", a.run_a);
    s.flag("run_b", a.run_b);
    s.flag("window", a.window);
    s.flag("out", a.out);
    let run_a: String = s.require("run_a")?;
    let run_b: Option<String> = s.optional("run_b")?;
    let window = s.get("window", reggan::eval::DEFAULT_WINDOW)?;
    let out: PathBuf = s.require::<String>("out")?.into();
    s.finish()?;
    if window == 0 {
        return Err(CliError::Usage("window must be positive".into()));
    }

    let a_rows = read_run(&run_a)?;
    let (csv, verdict) = match &run_b {
        Some(b) => {
            let c = compare_runs(&a_rows, &read_run(b)?, window);
            (c.to_csv(), c.verdict())
        }
        None => {
            let t = score_trend(&a_rows, window);
            let head = format!("window mean score: run_a {:.4} (std {:.4})\n", t.mean, t.std);
            (t.to_csv(), head + &t.describe("run_a"))
        }
    };
    std::fs::write(&out, csv).map_err(io_err(&out))?;
    s.write_snapshot(&sidecar(&out, ".config.txt"))?;
    print!("{verdict}");
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let mut s = Settings::load(a.config.as_deref())?;
    let points = s.get("points", 5usize)?.max(1);
    let seed = s.get("seed", 0u64)?;
    s.finish()?;
    let entries = op_suite(points, seed)?;
    let mut failed = Vec::new();
    for e in &entries {
        let verdict = if e.passes() { "PASS" } else { "FAIL" };
        println!("{verdict} {:<24} max scaled error {:.3e} over {} points", e.name, e.worst.max_rel_error, e.points);
        if !e.passes() {
            failed.push(e.name);
        }
    }
    if failed.is_empty() {
        println!("all {} ops within {SUITE_TOLERANCE:e}", entries.len());
        Ok(())
    } else {
        Err(CliError::Data(format!("gradient check failed for {}", failed.join(", "))))
    }
}
