use super::{AutodiffError, Tape, Tensor, Var};

/// Central-difference step for 64-bit checks.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Reverse-mode vs central-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    /// `max_i |a_i - n_i| / max(|a|_inf, |n|_inf)`: worst entry error
    /// measured against the gradient's own scale, so near-zero entries do
    /// not blow up the ratio.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `analytic` against central differences of `value` at `point`.
pub fn compare_gradients(mut value: impl FnMut(&[f64]) -> f64, analytic: &[f64], point: &[f64], h: f64) -> GradReport {
    assert_eq!(analytic.len(), point.len(), "gradient and point lengths differ");
    let mut x = point.to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = value(&x);
            x[i] = orig - h;
            let down = value(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect();
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let scale = inf(analytic).max(inf(&numeric)).max(f64::MIN_POSITIVE);
    let (mut worst_index, mut max_abs_error) = (0, 0.0f64);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let d = (a - n).abs();
        if d > max_abs_error || d.is_nan() {
            max_abs_error = d;
            worst_index = i;
        }
    }
    GradReport {
        max_rel_error: max_abs_error / scale,
        max_abs_error,
        worst_index,
        analytic: analytic.to_vec(),
        numeric,
    }
}

/// Checks the gradient of the scalar built by `build` with respect to every
/// tensor in `inputs`, flattened and concatenated in order.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], build: F, h: f64) -> Result<GradReport, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |tensors: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Vec<f64>), AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        if tape.value(out).numel() != 1 {
            return Err(AutodiffError::NotScalar(tape.shape(out).to_vec()));
        }
        let y = tape.value(out).item();
        let mut grad = Vec::new();
        if with_grad {
            tape.backward(out)?;
            for (v, t) in vars.iter().zip(tensors) {
                match tape.grad(*v) {
                    Some(g) => grad.extend_from_slice(g),
                    None => grad.extend(std::iter::repeat_n(0.0, t.numel())),
                }
            }
        }
        Ok((y, grad))
    };
    let (_, analytic) = eval(inputs, true)?;
    let point: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let unflatten = |flat: &[f64]| -> Vec<Tensor<f64>> {
        let mut off = 0;
        inputs
            .iter()
            .map(|t| {
                let n = t.numel();
                off += n;
                Tensor::new(t.shape(), flat[off - n..off].to_vec()).expect("same layout")
            })
            .collect()
    };
    let mut failure = None;
    let report = compare_gradients(
        |flat| match eval(&unflatten(flat), false) {
            Ok((y, _)) => y,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        &analytic,
        &point,
        h,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_at_two() {
        let r = compare_gradients(|x| x[0].powi(3), &[12.0], &[2.0], DEFAULT_STEP);
        assert!((r.numeric[0] - 12.0).abs() < 1e-7);
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    }

    #[test]
    fn cubic_through_the_tape() {
        let x = Tensor::new(&[1], vec![2.0]).unwrap();
        let r = gradcheck(
            &[x],
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                let cube = t.mul(sq, v[0])?;
                Ok(t.sum(cube))
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!((r.analytic[0] - 12.0).abs() < 1e-12);
        assert!(r.passes(1e-8));
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let r = compare_gradients(|x| x[0].sin() * x[1], &[1.0, 1.0], &[0.4, 2.0], DEFAULT_STEP);
        assert!(!r.passes(1e-3));
    }
}
