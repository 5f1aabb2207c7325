use std::collections::BTreeMap;

use super::{AutodiffError, Scalar};

/// Adam with bias correction. Moments are keyed by parameter name and
/// created on first use.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: T, beta1: T, beta2: T, eps: T) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(String::as_str)
    }

    /// Restores saved state. Shapes are checked lazily at the next step.
    pub fn restore(&mut self, step: u64, moments: impl IntoIterator<Item = (String, Vec<T>, Vec<T>)>) {
        self.step = step;
        self.moments = moments.into_iter().map(|(k, m, v)| (k, (m, v))).collect();
    }

    /// One update of every `(name, param, grad)` triple; the step counter
    /// advances by one per call.
    pub fn step<'a, I>(&mut self, updates: I) -> Result<(), AutodiffError>
    where
        I: IntoIterator<Item = (&'a str, &'a mut [T], &'a [T])>,
    {
        let updates: Vec<_> = updates.into_iter().collect();
        for (name, p, g) in &updates {
            if p.len() != g.len() {
                return Err(AutodiffError::shape(format!(
                    "adam: parameter {name} has {} elements, gradient {}",
                    p.len(),
                    g.len()
                )));
            }
            if let Some((m, _)) = self.moments.get(*name) {
                if m.len() != p.len() {
                    return Err(AutodiffError::shape(format!(
                        "adam: moments for {name} hold {} elements, parameter {}",
                        m.len(),
                        p.len()
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::ONE - T::from_f64(self.beta1.to_f64().powi(t));
        let bc2 = T::ONE - T::from_f64(self.beta2.to_f64().powi(t));
        for (name, p, g) in updates {
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![T::ZERO; p.len()], vec![T::ZERO; p.len()]));
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (T::ONE - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (T::ONE - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut st = AdamState::new(0.01f32, 0.5, 0.999, 1e-8);
        let mut p = vec![0.3f32, -1.0];
        st.step([("w", p.as_mut_slice(), [0.0f32, 0.0].as_slice())]).unwrap();
        assert_eq!(p, vec![0.3, -1.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn quadratic_converges() {
        let mut st = AdamState::new(0.05f64, 0.9, 0.999, 1e-8);
        let mut x = vec![3.0f64];
        let mut steps = 0;
        while (x[0] - 1.0).powi(2) >= 1e-6 {
            let g = vec![2.0 * (x[0] - 1.0)];
            st.step([("x", x.as_mut_slice(), g.as_slice())]).unwrap();
            steps += 1;
            assert!(steps <= 2000, "no convergence, x = {}", x[0]);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut st = AdamState::new(0.1f64, 0.9, 0.999, 0.0);
        let mut p = vec![0.0f64];
        st.step([("p", p.as_mut_slice(), [5.0f64].as_slice())]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut st = AdamState::new(0.1f32, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0f32; 2];
        assert!(st.step([("p", p.as_mut_slice(), [1.0f32].as_slice())]).is_err());
        assert_eq!(st.step_count(), 0);
    }
}
