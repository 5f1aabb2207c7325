//! Finite-difference checks of every differentiable tape op, shared by the
//! `gradcheck` command and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{gradcheck, AutodiffError, GradReport, NormMode, RunningStats, Tape, Tensor, Var, DEFAULT_STEP};

/// Tolerance on the scaled error in 64-bit mode.
pub const SUITE_TOLERANCE: f64 = 1e-5;

type Inputs = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;
type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>;

/// Worst result for one op over all sampled points.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub points: usize,
    pub worst: GradReport,
}

impl SuiteEntry {
    pub fn passes(&self) -> bool {
        self.worst.passes(SUITE_TOLERANCE)
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Distinct magnitudes at least `gap` apart, random signs: keeps ReLU kinks
/// and max ties outside the stencil.
fn spread(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (1..=n).map(|i| i as f64 * gap).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    for v in &mut vals {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    Tensor::new(shape, vals).expect("sized")
}

/// `sum(r * y)` with `r` fixed per op.
fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let r = randn(&mut ChaCha8Rng::seed_from_u64(seed), t.shape(y));
    let r = t.constant(r);
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

fn bn(t: &mut Tape<f64>, v: &[Var], mode: NormMode) -> Result<Var, AutodiffError> {
    let c = t.shape(v[0])[1];
    let mut rs = RunningStats::new(c);
    rs.mean.iter_mut().enumerate().for_each(|(i, m)| *m = 0.1 * i as f64);
    rs.var.iter_mut().enumerate().for_each(|(i, s)| *s = 0.5 + 0.2 * i as f64);
    let y = t.batchnorm(v[0], v[1], v[2], &mut rs, mode, 0.1, 1e-5)?;
    project(t, y, 7)
}

fn bn_inputs(r: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![randn(r, &[4, 3, 2, 2]), randn(r, &[3]), randn(r, &[3])]
}

fn cases() -> Vec<(&'static str, Inputs, Build)> {
    vec![
        ("add", |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])], |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, 1)
        }),
        ("sub", |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])], |t, v| {
            let y = t.sub(v[0], v[1])?;
            project(t, y, 2)
        }),
        ("mul", |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])], |t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, 3)
        }),
        ("affine", |r| vec![randn(r, &[5])], |t, v| {
            let y = t.affine(v[0], 0.5, 0.5);
            project(t, y, 4)
        }),
        ("mean", |r| vec![randn(r, &[2, 5])], |t, v| {
            let y = t.mean(v[0]);
            let y = t.mul(y, y)?;
            Ok(t.sum(y))
        }),
        ("reshape", |r| vec![randn(r, &[2, 6])], |t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            project(t, y, 5)
        }),
        ("relu", |r| vec![spread(r, &[12], 0.05)], |t, v| {
            let y = t.relu(v[0]);
            project(t, y, 6)
        }),
        ("leaky_relu", |r| vec![spread(r, &[12], 0.05)], |t, v| {
            let y = t.leaky_relu(v[0], 0.2);
            project(t, y, 8)
        }),
        ("tanh", |r| vec![randn(r, &[10])], |t, v| {
            let y = t.tanh(v[0]);
            project(t, y, 9)
        }),
        ("sigmoid", |r| vec![randn(r, &[10])], |t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y, 10)
        }),
        ("softmax", |r| vec![randn(r, &[3, 5])], |t, v| {
            let y = t.softmax(v[0], 1)?;
            project(t, y, 11)
        }),
        ("column", |r| vec![randn(r, &[3, 5])], |t, v| {
            let y = t.column(v[0], 2)?;
            project(t, y, 12)
        }),
        ("linear", |r| vec![randn(r, &[3, 5]), randn(r, &[4, 5]), randn(r, &[4])], |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y, 13)
        }),
        ("conv2d", |r| vec![randn(r, &[2, 3, 5, 5]), randn(r, &[4, 3, 3, 3]), randn(r, &[4])], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            project(t, y, 14)
        }),
        ("conv2d_stride2", |r| vec![randn(r, &[2, 2, 8, 8]), randn(r, &[3, 2, 4, 4])], |t, v| {
            let y = t.conv2d(v[0], v[1], None, 2, 1)?;
            project(t, y, 15)
        }),
        ("conv_transpose2d", |r| vec![randn(r, &[2, 3, 4, 4]), randn(r, &[3, 2, 4, 4]), randn(r, &[2])], |t, v| {
            let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)?;
            project(t, y, 16)
        }),
        ("maxpool2d", |r| vec![spread(r, &[2, 2, 4, 6], 0.01)], |t, v| {
            let y = t.maxpool2d(v[0], 2, 2)?;
            project(t, y, 17)
        }),
        ("batchnorm_train", bn_inputs, |t, v| bn(t, v, NormMode::Train)),
        ("batchnorm_frozen_stats", bn_inputs, |t, v| bn(t, v, NormMode::TrainFrozenStats)),
        ("batchnorm_eval", bn_inputs, |t, v| bn(t, v, NormMode::Eval)),
        ("bce_with_logits", |r| vec![randn(r, &[6])], |t, v| {
            t.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 0.0, 0.3, 0.7])
        }),
        ("cross_entropy", |r| vec![randn(r, &[4, 5])], |t, v| t.cross_entropy(v[0], &[0, 4, 2, 2])),
        (
            "three_layer_net",
            |r| {
                vec![
                    randn(r, &[4, 2, 6, 6]),
                    randn(r, &[3, 2, 3, 3]),
                    randn(r, &[3]),
                    randn(r, &[3]),
                    randn(r, &[5, 12]),
                    randn(r, &[5]),
                    randn(r, &[3, 5]),
                ]
            },
            |t, v| {
                let mut rs = RunningStats::new(3);
                let h = t.conv2d(v[0], v[1], None, 1, 0)?;
                let h = t.batchnorm(h, v[2], v[3], &mut rs, NormMode::Train, 0.1, 1e-5)?;
                let h = t.tanh(h);
                let h = t.maxpool2d(h, 2, 2)?;
                let h = t.reshape(h, &[4, 12])?;
                let h = t.linear(h, v[4], Some(v[5]))?;
                let h = t.sigmoid(h);
                let h = t.linear(h, v[6], None)?;
                t.cross_entropy(h, &[0, 1, 2, 1])
            },
        ),
    ]
}

/// Runs every case at `points` seeded random points and keeps the worst
/// report per op.
pub fn op_suite(points: usize, seed: u64) -> Result<Vec<SuiteEntry>, AutodiffError> {
    cases()
        .into_iter()
        .enumerate()
        .map(|(k, (name, inputs, build))| {
            let mut worst: Option<GradReport> = None;
            for p in 0..points {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 32) ^ p as u64);
                let report = gradcheck(&inputs(&mut rng), build, DEFAULT_STEP)?;
                if worst.as_ref().is_none_or(|w| !(report.max_rel_error <= w.max_rel_error)) {
                    worst = Some(report);
                }
            }
            Ok(SuiteEntry {
                name,
                points,
                worst: worst.expect("at least one point"),
            })
        })
        .collect()
}
