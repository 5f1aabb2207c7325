mod common;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use reggan::autodiff::{gradcheck, AutodiffError, NormMode, RunningStats, Tape, Tensor, Var, DEFAULT_STEP};

const TOL64: f64 = 1e-5;
const POINTS: u64 = 5;

fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Random values at least `gap` away from zero and from each other, so
/// kinks and max ties stay outside the finite-difference stencil.
fn spread(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0) * gap).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let signs: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Tensor::new(shape, vals.iter().zip(signs).map(|(v, s)| v * s).collect()).unwrap()
}

/// `sum(r * y)` with a fixed random `r`, so every output entry matters.
fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = common::rng(seed);
    let r = randn(&mut rng, t.shape(y));
    let r = t.constant(r);
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

fn check<F>(name: &str, make_inputs: impl Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<Tensor<f64>>, build: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    for point in 0..POINTS {
        let mut rng = common::rng(1000 + point);
        let inputs = make_inputs(&mut rng);
        let report = gradcheck(&inputs, &build, DEFAULT_STEP).unwrap();
        assert!(
            report.passes(TOL64),
            "{name} point {point}: rel {} at {} (analytic {} numeric {})",
            report.max_rel_error,
            report.worst_index,
            report.analytic[report.worst_index],
            report.numeric[report.worst_index]
        );
    }
}

#[test]
fn gradcheck_conv2d() {
    check(
        "conv2d",
        |r| vec![randn(r, &[2, 3, 5, 5]), randn(r, &[4, 3, 3, 3]), randn(r, &[4])],
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            project(t, y, 1)
        },
    );
    check(
        "conv2d stride 2",
        |r| vec![randn(r, &[2, 2, 8, 8]), randn(r, &[3, 2, 4, 4]), randn(r, &[3])],
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            project(t, y, 2)
        },
    );
}

#[test]
fn gradient_of_conv_sum_matches_finite_differences() {
    for point in 0..POINTS {
        let mut rng = common::rng(point);
        let inputs = vec![randn(&mut rng, &[2, 3, 5, 5]), randn(&mut rng, &[4, 3, 3, 3])];
        let report = gradcheck(
            &inputs,
            |t, v| {
                let y = t.conv2d(v[0], v[1], None, 1, 0)?;
                Ok(t.sum(y))
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.passes(TOL64), "rel {}", report.max_rel_error);
    }
}

#[test]
fn gradcheck_conv_transpose2d() {
    check(
        "conv_transpose2d",
        |r| vec![randn(r, &[2, 3, 4, 4]), randn(r, &[3, 2, 4, 4]), randn(r, &[2])],
        |t, v| {
            let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)?;
            project(t, y, 3)
        },
    );
    check(
        "conv_transpose2d from 1x1",
        |r| vec![randn(r, &[2, 5, 1, 1]), randn(r, &[5, 2, 4, 4])],
        |t, v| {
            let y = t.conv_transpose2d(v[0], v[1], None, 1, 0)?;
            project(t, y, 4)
        },
    );
}

#[test]
fn gradcheck_maxpool() {
    check(
        "maxpool2d",
        |r| vec![spread(r, &[2, 2, 4, 6], 0.01)],
        |t, v| {
            let y = t.maxpool2d(v[0], 2, 2)?;
            project(t, y, 5)
        },
    );
}

#[test]
fn gradcheck_linear() {
    check(
        "linear",
        |r| vec![randn(r, &[3, 5]), randn(r, &[4, 5]), randn(r, &[4])],
        |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y, 6)
        },
    );
}

#[test]
fn gradcheck_batchnorm_both_modes() {
    for mode in [NormMode::Train, NormMode::TrainFrozenStats, NormMode::Eval] {
        check(
            "batchnorm",
            |r| vec![randn(r, &[3, 2, 3, 3]), randn(r, &[2]), randn(r, &[2])],
            |t, v| {
                let mut rs = RunningStats { mean: vec![0.3, -0.2], var: vec![1.5, 0.7] };
                let y = t.batchnorm(v[0], v[1], v[2], &mut rs, mode, 0.1, 1e-5)?;
                project(t, y, 7)
            },
        );
    }
    check(
        "batchnorm rank 2",
        |r| vec![randn(r, &[4, 3]), randn(r, &[3]), randn(r, &[3])],
        |t, v| {
            let mut rs = RunningStats::new(3);
            let y = t.batchnorm(v[0], v[1], v[2], &mut rs, NormMode::Train, 0.1, 1e-5)?;
            project(t, y, 8)
        },
    );
}

#[test]
fn gradcheck_activations() {
    type Act = fn(&mut Tape<f64>, Var) -> Var;
    let acts: [(&str, Act); 4] = [
        ("relu", |t, x| t.relu(x)),
        ("leaky_relu", |t, x| t.leaky_relu(x, 0.2)),
        ("tanh", |t, x| t.tanh(x)),
        ("sigmoid", |t, x| t.sigmoid(x)),
    ];
    for (name, act) in acts {
        check(
            name,
            |r| vec![spread(r, &[3, 4], 0.1)],
            |t, v| {
                let y = act(t, v[0]);
                project(t, y, 9)
            },
        );
    }
    for axis in 0..3 {
        check(
            "softmax",
            |r| vec![randn(r, &[2, 3, 4])],
            |t, v| {
                let y = t.softmax(v[0], axis)?;
                project(t, y, 10)
            },
        );
    }
}

#[test]
fn gradcheck_elementwise_and_reductions() {
    check(
        "add/sub/mul/affine/mean/reshape/column",
        |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])],
        |t, v| {
            let a = t.add(v[0], v[1])?;
            let b = t.sub(a, v[1])?;
            let c = t.mul(b, v[1])?;
            let d = t.affine(c, 1.7, -0.3);
            let e = t.reshape(d, &[4, 3])?;
            let col = t.column(e, 1)?;
            let m = t.mean(col);
            let s = project(t, e, 11)?;
            let both = t.add(m, s)?;
            Ok(t.scale(both, 0.5))
        },
    );
}

#[test]
fn gradcheck_losses() {
    check(
        "bce_with_logits",
        |r| vec![randn(r, &[6])],
        |t, v| t.bce_with_logits(v[0], &[1.0, 0.0, 0.3, 1.0, 0.0, 0.9]),
    );
    check(
        "cross_entropy",
        |r| vec![randn(r, &[4, 11])],
        |t, v| t.cross_entropy(v[0], &[0, 10, 3, 3]),
    );
}

#[test]
fn gradcheck_three_layer_toy_net() {
    check(
        "toy net",
        |r| {
            vec![
                randn(r, &[4, 1, 6, 6]),
                randn(r, &[3, 1, 3, 3]),
                randn(r, &[3]),
                randn(r, &[3]),
                randn(r, &[5, 12]),
                randn(r, &[5]),
            ]
        },
        |t, v| {
            let h = t.conv2d(v[0], v[1], None, 1, 0)?;
            let h = t.batchnorm(h, v[2], v[3], &mut RunningStats::new(3), NormMode::Train, 0.1, 1e-5)?;
            let h = t.leaky_relu(h, 0.2);
            let h = t.maxpool2d(h, 2, 2)?;
            let h = t.reshape(h, &[4, 12])?;
            let h = t.linear(h, v[4], Some(v[5]))?;
            t.cross_entropy(h, &[0, 1, 4, 2])
        },
    );
}

#[test]
fn f32_gradients_track_f64() {
    let mut rng = common::rng(77);
    let x64 = randn(&mut rng, &[2, 3, 6, 6]);
    let w64 = randn(&mut rng, &[4, 3, 3, 3]);
    let run64 = {
        let mut t = Tape::<f64>::new();
        let (x, w) = (t.leaf(x64.clone()), t.leaf(w64.clone()));
        let y = t.conv2d(x, w, None, 1, 1).unwrap();
        let y = t.tanh(y);
        let l = t.mean(y);
        t.backward(l).unwrap();
        t.grad(w).unwrap().to_vec()
    };
    let mut t = Tape::<f32>::new();
    let (x, w) = (t.leaf(x64.cast()), t.leaf(w64.cast()));
    let y = t.conv2d(x, w, None, 1, 1).unwrap();
    let y = t.tanh(y);
    let l = t.mean(y);
    t.backward(l).unwrap();
    let g32 = t.grad(w).unwrap();
    let scale = run64.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in g32.iter().zip(&run64) {
        assert!((*a as f64 - b).abs() / scale < 1e-3);
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut rng = common::rng(5);
    for (n, c, f, hw, k, s, p) in [(2, 3, 4, 6, 3, 1, 1), (1, 2, 3, 8, 4, 2, 1), (3, 4, 2, 4, 4, 1, 0), (2, 1, 1, 5, 1, 1, 0)] {
        let x = randn(&mut rng, &[n, c, hw, hw]);
        let w = randn(&mut rng, &[f, c, k, k]);
        let mut t = Tape::<f64>::new();
        let (xv, wv) = (t.constant(x.clone()), t.constant(w));
        let cx = t.conv2d(xv, wv, None, s, p).unwrap();
        let y = randn(&mut rng, t.shape(cx));
        let yv = t.constant(y.clone());
        let ty = t.conv_transpose2d(yv, wv, None, s, p).unwrap();
        assert_eq!(t.shape(ty), x.shape());
        let lhs: f64 = t.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(t.value(ty).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(rhs.abs()).max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn conv_trivial_cases() {
    let mut rng = common::rng(6);
    let x = randn(&mut rng, &[2, 3, 4, 5]);
    let eye = Tensor::from_fn(&[3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
    let mut t = Tape::<f64>::new();
    let xv = t.constant(x.clone());
    let ev = t.constant(eye);
    let y = t.conv2d(xv, ev, None, 1, 0).unwrap();
    assert_eq!(t.value(y), &x);
    let zw = t.constant(Tensor::zeros(&[2, 3, 3, 3]));
    let zb = t.constant(Tensor::zeros(&[2]));
    let y = t.conv2d(xv, zw, Some(zb), 1, 1).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));

    let small = t.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let tw = t.constant(Tensor::zeros(&[2, 1, 4, 4]));
    let up = t.conv_transpose2d(small, tw, None, 2, 1).unwrap();
    assert_eq!(t.shape(up), &[1, 1, 8, 8]);
    assert!(matches!(t.conv2d(xv, zw, None, 2, 0), Err(AutodiffError::Shape(_))));
}

#[test]
fn maxpool_properties() {
    let mut t = Tape::<f64>::new();
    let c = t.constant(Tensor::full(&[1, 2, 4, 4], 0.25));
    let y = t.maxpool2d(c, 2, 2).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.25));
    assert_eq!(t.shape(y), &[1, 2, 2, 2]);

    let mut rng = common::rng(9);
    let x = randn(&mut rng, &[1, 1, 4, 4]);
    let xv = t.constant(x.clone());
    let y = t.maxpool2d(xv, 2, 2).unwrap();
    for oy in 0..2 {
        for ox in 0..2 {
            let m = t.value(y).data()[oy * 2 + ox];
            for dy in 0..2 {
                for dx in 0..2 {
                    assert!(m >= x.data()[(2 * oy + dy) * 4 + 2 * ox + dx]);
                }
            }
        }
    }
    assert!(t.maxpool2d(xv, 3, 2).is_err());
}

#[test]
fn maxpool_ties_route_to_first() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::full(&[1, 1, 2, 2], 1.0));
    let y = t.maxpool2d(x, 2, 2).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn linear_trivial_cases() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
    let eye = t.constant(Tensor::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 }));
    let y = t.linear(x, eye, None).unwrap();
    assert_eq!(t.value(y).data(), t.value(x).data());
    let zw = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::new(&[2], vec![0.5, -1.0]).unwrap());
    let y = t.linear(x, zw, Some(b)).unwrap();
    assert_eq!(t.value(y).data(), &[0.5, -1.0, 0.5, -1.0]);
    assert!(t.linear(x, b, None).is_err());
}

#[test]
fn batchnorm_normalizes_and_tracks() {
    let mut rng = common::rng(12);
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_fn(&[8, 3, 4, 4], |i| {
        let v: f64 = StandardNormal.sample(&mut rng);
        3.0 * v + (i % 3) as f64
    }));
    let g = t.constant(Tensor::full(&[3], 1.0));
    let b = t.constant(Tensor::zeros(&[3]));
    let mut rs = RunningStats::new(3);
    let y = t.batchnorm(x, g, b, &mut rs, NormMode::Train, 0.1, 1e-8).unwrap();
    let d = t.value(y).data();
    for ch in 0..3 {
        let vals: Vec<f64> = (0..8).flat_map(|n| (0..16).map(move |i| (n * 3 + ch) * 16 + i)).map(|i| d[i]).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(m.abs() < 1e-4 && (v - 1.0).abs() < 1e-4, "channel {ch}: mean {m} var {v}");
    }
    assert!(rs.mean.iter().any(|&m| m != 0.0));
    let before = rs.clone();
    t.batchnorm(x, g, b, &mut rs, NormMode::TrainFrozenStats, 0.1, 1e-5).unwrap();
    t.batchnorm(x, g, b, &mut rs, NormMode::Eval, 0.1, 1e-5).unwrap();
    assert_eq!(rs, before);

    let constant = t.constant(Tensor::full(&[4, 2, 2, 2], 3.0));
    let g = t.constant(Tensor::new(&[2], vec![2.0, 5.0]).unwrap());
    let beta = t.constant(Tensor::new(&[2], vec![0.1, -0.4]).unwrap());
    let y = t.batchnorm(constant, g, beta, &mut RunningStats::new(2), NormMode::Train, 0.1, 1e-5).unwrap();
    for (i, &v) in t.value(y).data().iter().enumerate() {
        assert_eq!(v, if (i / 4) % 2 == 0 { 0.1 } else { -0.4 });
    }

    let one = t.constant(Tensor::zeros(&[1, 2, 2, 2]));
    assert!(matches!(
        t.batchnorm(one, g, beta, &mut RunningStats::new(2), NormMode::Train, 0.1, 1e-5),
        Err(AutodiffError::DegenerateBatch)
    ));
    assert!(t.batchnorm(one, g, beta, &mut RunningStats::new(2), NormMode::Eval, 0.1, 1e-5).is_ok());
}

#[test]
fn running_variance_is_unbiased() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap());
    let g = t.constant(Tensor::full(&[1], 1.0));
    let b = t.constant(Tensor::zeros(&[1]));
    let mut rs = RunningStats::new(1);
    t.batchnorm(x, g, b, &mut rs, NormMode::Train, 0.1, 1e-5).unwrap();
    assert!((rs.mean[0] - 0.2).abs() < 1e-12);
    assert!((rs.var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
}

#[test]
fn activation_values() {
    let mut t = Tape::<f64>::new();
    let z = t.constant(Tensor::zeros(&[1]));
    let s = t.sigmoid(z);
    assert_eq!(t.value(s).data(), &[0.5]);
    let c = t.constant(Tensor::full(&[2, 5], 3.3));
    let sm = t.softmax(c, 1).unwrap();
    assert!(t.value(sm).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));

    let mut rng = common::rng(13);
    let x = t.constant(Tensor::from_fn(&[3, 7, 2], |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        50.0 * v
    }));
    for axis in 0..3 {
        let sm = t.softmax(x, axis).unwrap();
        let shape = t.shape(sm).to_vec();
        let d = t.value(sm).data();
        assert!(d.iter().all(|&v| v >= 0.0));
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        for o in 0..outer {
            for i in 0..inner {
                let total: f64 = (0..shape[axis]).map(|j| d[(o * shape[axis] + j) * inner + i]).sum();
                assert!((total - 1.0).abs() < 1e-6);
            }
        }
    }
    let big = t.constant(Tensor::new(&[2], vec![-1e4, 1e4]).unwrap());
    let s = t.sigmoid(big);
    assert_eq!(t.value(s).data(), &[0.0, 1.0]);
}

#[test]
fn bce_values_and_stability() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::zeros(&[1]));
    let l = t.bce_with_logits(x, &[1.0]).unwrap();
    assert!((t.value(l).item() - 0.693147).abs() < 1e-6);
    let x = t.constant(Tensor::full(&[1], 1000.0));
    let l = t.bce_with_logits(x, &[1.0]).unwrap();
    assert!(t.value(l).item().is_finite() && t.value(l).item().abs() < 1e-12);
    for mag in [1e3, 1e4] {
        let x = t.constant(Tensor::new(&[2], vec![-mag, mag]).unwrap());
        let l = t.bce_with_logits(x, &[1.0, 0.0]).unwrap();
        assert!(t.value(l).item().is_finite());
    }
    assert!(t.bce_with_logits(x, &[1.0, 0.0]).is_err());

    let mut rng = common::rng(14);
    for _ in 0..500 {
        let z: f64 = rng.random_range(-10.0..=10.0);
        let y: f64 = rng.random_range(0.0..=1.0);
        let x = t.constant(Tensor::full(&[1], z));
        let lv = t.bce_with_logits(x, &[y]).unwrap();
        let l = t.value(lv).item();
        let s = 1.0 / (1.0 + (-z).exp());
        let naive = -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
        assert!((l - naive).abs() < 1e-6, "z {z} y {y}: {l} vs {naive}");
    }
}

#[test]
fn cross_entropy_values() {
    let mut t = Tape::<f64>::new();
    let u = t.constant(Tensor::zeros(&[3, 11]));
    let l = t.cross_entropy(u, &[0, 5, 10]).unwrap();
    assert!((t.value(l).item() - 11f64.ln()).abs() < 1e-12);
    assert!((t.value(l).item() - 2.397895).abs() < 1e-6);
    let mut logits = vec![0.0; 11];
    logits[4] = 1e4;
    let h = t.constant(Tensor::new(&[1, 11], logits.clone()).unwrap());
    let l = t.cross_entropy(h, &[4]).unwrap();
    assert!(t.value(l).item().abs() < 1e-12);
    let l = t.cross_entropy(h, &[3]).unwrap();
    assert!(t.value(l).item().is_finite());
    assert!(matches!(t.cross_entropy(h, &[11]), Err(AutodiffError::Index { index: 11, classes: 11 })));
}

#[test]
fn backward_basics() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_fn(&[2, 3], |i| i as f64));
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[1.0; 6]);

    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_fn(&[3], |i| i as f64));
    let y = t.add(x, x).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[2.0; 3]);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[4.0; 3]);
    t.zero_grad();
    assert!(t.grad(x).is_none());

    assert!(matches!(t.backward(y), Err(AutodiffError::NotScalar(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::full(&[2], 2.0));
    let c = t.constant(Tensor::full(&[2], 3.0));
    let y = t.mul(x, c).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[3.0, 3.0]);
    assert!(t.grad(c).is_none());
}

#[test]
fn reverse_accumulation_is_linear() {
    let mut rng = common::rng(15);
    let x0 = randn(&mut rng, &[2, 2, 4, 4]);
    let w0 = randn(&mut rng, &[3, 2, 3, 3]);
    let (a, b) = (0.7, -2.3);
    let grad_of = |wa: f64, wb: f64| {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(x0.clone());
        let w = t.constant(w0.clone());
        let f = t.conv2d(x, w, None, 1, 1).unwrap();
        let f = t.tanh(f);
        let f = t.mean(f);
        let g = t.sigmoid(x);
        let g = project(&mut t, g, 16).unwrap();
        let fa = t.scale(f, wa);
        let gb = t.scale(g, wb);
        let total = t.add(fa, gb).unwrap();
        t.backward(total).unwrap();
        t.grad(x).unwrap().to_vec()
    };
    let (gf, gg, combo) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0), grad_of(a, b));
    for i in 0..combo.len() {
        assert!((combo[i] - (a * gf[i] + b * gg[i])).abs() < 1e-12);
    }
}

#[test]
fn broken_gradient_fails_gradcheck() {
    // Reports a relu gradient through the wrong branch: d/dx of leaky_relu
    // with slope 0.2 checked against a function using slope 0.3.
    let x = Tensor::new(&[4], vec![-1.0, -0.5, 0.5, 1.0]).unwrap();
    let mut t = Tape::<f64>::new();
    let v = t.leaf(x.clone());
    let y = t.leaf(Tensor::zeros(&[4]));
    let y2 = t.leaky_relu(v, 0.2);
    let l = t.add(y, y2).unwrap();
    let l = t.sum(l);
    t.backward(l).unwrap();
    let analytic = t.grad(v).unwrap().to_vec();
    let report = reggan::autodiff::compare_gradients(
        |p| p.iter().map(|&z| if z > 0.0 { z } else { 0.3 * z }).sum(),
        &analytic,
        x.data(),
        DEFAULT_STEP,
    );
    assert!(!report.passes(TOL64));
}

#[test]
fn bound_parameters_share_one_leaf() {
    let mut t = Tape::<f64>::new();
    let w = Tensor::full(&[2], 1.5);
    let a = t.bind("layer/weight", &w, true);
    let b = t.bind("layer/weight", &w, true);
    assert_eq!(a, b);
    let y = t.mul(a, b).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert_eq!(t.param_grad("layer/weight").unwrap(), &[3.0, 3.0]);
}
