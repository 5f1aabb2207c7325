use std::collections::HashMap;

use super::conv::{self, ConvGeom};
use super::{AutodiffError, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    /// Handle of the `i`-th recorded node.
    pub fn from_index(i: usize) -> Self {
        Self(i)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Relu(Var),
    LeakyRelu { x: Var, slope: T },
    Tanh(Var),
    Sigmoid(Var),
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    Column { x: Var, col: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, filters: usize },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cin: usize },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    BceWithLogits { x: Var, targets: Vec<T> },
    CrossEntropy { x: Var, probs: Vec<T>, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch-norm running statistics, updated in place by training-mode forwards.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::ZERO; channels],
            var: vec![T::ONE; channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; running statistics updated.
    Train,
    /// Batch statistics; running statistics left untouched.
    TrainFrozenStats,
    /// Running statistics.
    Eval,
}

/// Records operations in execution order; index order is a valid
/// topological order for reverse accumulation.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: HashMap<usize, Vec<T>>,
    bindings: HashMap<String, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: HashMap::new(),
            bindings: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a named parameter once per tape; later binds of the same name
    /// reuse the first leaf so gradients accumulate across uses.
    pub fn bind(&mut self, name: &str, value: &Tensor<T>, requires_grad: bool) -> Var {
        if let Some(&v) = self.bindings.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, requires_grad);
        self.bindings.insert(name.to_string(), v);
        v
    }

    pub fn bound(&self, name: &str) -> Option<Var> {
        self.bindings.get(name).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a differentiable leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(&v.0).map(Vec::as_slice)
    }

    /// Gradient of the parameter bound under `name`.
    pub fn param_grad(&self, name: &str) -> Option<&[T]> {
        self.bound(name).and_then(|v| self.grad(v))
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(out, Op::Affine { x, scale }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.affine(x, factor, T::ZERO)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::from_f64(v.numel() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::ZERO { v } else { T::ZERO });
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self.value(x).map(|v| if v > T::ZERO { v } else { slope * v });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(AutodiffError::shape(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![T::ZERO; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mx = (0..len).map(|j| src[at(j)]).fold(src[at(0)], T::max);
                let mut z = T::ZERO;
                for j in 0..len {
                    let e = (src[at(j)] - mx).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / z;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Softmax { x, outer, len, inner }, rg))
    }

    /// Column `col` of a `[N, K]` tensor, as a `[N]` tensor.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var, AutodiffError> {
        let &[n, k] = self.shape(x) else {
            return Err(AutodiffError::shape(format!("column expects rank 2, got {:?}", self.shape(x))));
        };
        if col >= k {
            return Err(AutodiffError::Index { index: col, classes: k });
        }
        let data = (0..n).map(|i| self.value(x).data()[i * k + col]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[n], data)?, Op::Column { x, col }, rg))
    }

    /// `x w^T + b` for `x: [N, D]`, `w: [E, D]`, `b: [E]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (&[n, d], &[e, wd]) = (self.shape(x), self.shape(w)) else {
            return Err(AutodiffError::shape(format!(
                "linear expects x [N,D] and w [E,D], got {:?} and {:?}",
                self.shape(x),
                self.shape(w)
            )));
        };
        if d != wd {
            return Err(AutodiffError::shape(format!("linear: input width {d} != weight width {wd}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [e] {
                return Err(AutodiffError::shape(format!("linear bias {:?} != [{e}]", self.shape(b))));
            }
        }
        let mut out = vec![T::ZERO; n * e];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(e) {
                row.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { T::ONE } else { T::ZERO };
        super::scalar::gemm(
            T::ONE,
            super::scalar::MatRef::new(self.value(x).data(), n, d),
            super::scalar::MatRef::new(self.value(w).data(), e, d).t(),
            beta,
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(&[n, e], out)?, Op::Linear { x, w, b }, rg))
    }

    fn check_bias(&self, b: Option<Var>, channels: usize, what: &str) -> Result<(), AutodiffError> {
        match b {
            Some(b) if self.shape(b) != [channels] => Err(AutodiffError::shape(format!(
                "{what} bias {:?} != [{channels}]",
                self.shape(b)
            ))),
            _ => Ok(()),
        }
    }

    /// Cross-correlation of `x: [N,C,H,W]` with `w: [F,C,k,k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, AutodiffError> {
        let (geom, filters, n) = conv::conv2d_geom(self.shape(x), self.shape(w), stride, pad)?;
        self.check_bias(b, filters, "conv2d")?;
        let out = conv::conv2d_forward(
            &geom,
            filters,
            n,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let t = Tensor::new(&[n, filters, geom.out_h, geom.out_w], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(t, Op::Conv2d { x, w, b, geom, filters }, rg))
    }

    /// Transposed convolution of `x: [N,Cin,H,W]` with `w: [Cin,Cout,k,k]`;
    /// the adjoint of [`Tape::conv2d`] with the same weight.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, AutodiffError> {
        let (geom, cin, n) = conv::conv_transpose2d_geom(self.shape(x), self.shape(w), stride, pad)?;
        self.check_bias(b, geom.channels, "conv_transpose2d")?;
        let out = conv::conv_transpose2d_forward(
            &geom,
            cin,
            n,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let t = Tensor::new(&[n, geom.channels, geom.h, geom.w], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(t, Op::ConvTranspose2d { x, w, b, geom, cin }, rg))
    }

    /// Windowed maximum over `[N,C,H,W]`. Ties resolve to the first element
    /// in row-major window order.
    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var, AutodiffError> {
        let [n, c, h, w] = conv::dims4(self.shape(x), "maxpool2d input")?;
        if window == 0 || stride == 0 || h < window || w < window || (h - window) % stride != 0 || (w - window) % stride != 0 {
            return Err(AutodiffError::shape(format!(
                "maxpool2d window {window} stride {stride} does not tile {h}x{w}"
            )));
        }
        let (ho, wo) = ((h - window) / stride + 1, (w - window) / stride + 1);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride * w + ox * stride;
                    for dy in 0..window {
                        for dx in 0..window {
                            let i = base + (oy * stride + dy) * w + ox * stride + dx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let t = Tensor::new(&[n, c, ho, wo], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::MaxPool2d { x, argmax }, rg))
    }

    /// Per-channel normalization of `[N,C,...]`. In the training modes the
    /// statistics come from the batch and `momentum` blends them into
    /// `running` (unbiased variance) when the mode tracks them.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        mode: NormMode,
        momentum: T,
        eps: T,
    ) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(AutodiffError::shape(format!("batchnorm expects [N,C,...], got {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        let plane: usize = shape[2..].iter().product();
        for (v, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.shape(v) != [c] {
                return Err(AutodiffError::shape(format!("batchnorm {what} {:?} != [{c}]", self.shape(v))));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(AutodiffError::shape("batchnorm running statistics do not match channels"));
        }
        let batch_stats = mode != NormMode::Eval;
        if batch_stats && n < 2 {
            return Err(AutodiffError::DegenerateBatch);
        }
        let src = self.value(x).data();
        let count = n * plane;
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::ZERO; src.len()];
        let mut out = vec![T::ZERO; src.len()];
        let mut inv_std = vec![T::ZERO; c];
        let planes = |ch: usize| (0..n).map(move |b| (b * c + ch) * plane..(b * c + ch + 1) * plane);
        for ch in 0..c {
            let (mean, var) = if batch_stats {
                let s: T = planes(ch).map(|r| src[r].iter().copied().sum::<T>()).sum();
                let mean = s / T::from_f64(count as f64);
                let ss: T = planes(ch)
                    .map(|r| src[r].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>())
                    .sum();
                let var = ss / T::from_f64(count as f64);
                if mode == NormMode::Train {
                    let unbiased = ss / T::from_f64((count - 1) as f64);
                    running.mean[ch] = (T::ONE - momentum) * running.mean[ch] + momentum * mean;
                    running.var[ch] = (T::ONE - momentum) * running.var[ch] + momentum * unbiased;
                }
                (mean, var)
            } else {
                (running.mean[ch], running.var[ch])
            };
            let is = T::ONE / (var + eps).sqrt();
            inv_std[ch] = is;
            for r in planes(ch) {
                for ((xh, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&src[r]) {
                    *xh = (v - mean) * is;
                    *o = g[ch] * *xh + bt[ch];
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    /// Mean of `max(x,0) - x y + ln(1 + exp(-|x|))`.
    pub fn bce_with_logits(&mut self, x: Var, targets: &[T]) -> Result<Var, AutodiffError> {
        let v = self.value(x);
        if v.numel() != targets.len() {
            return Err(AutodiffError::shape(format!(
                "bce_with_logits: {} logits, {} targets",
                v.numel(),
                targets.len()
            )));
        }
        let s: T = v
            .data()
            .iter()
            .zip(targets)
            .map(|(&l, &y)| l.max(T::ZERO) - l * y + (-l.abs()).exp().ln_1p())
            .sum();
        let loss = s / T::from_f64(targets.len() as f64);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                x,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Mean negative log-softmax of the target class, for `x: [N, K]`.
    pub fn cross_entropy(&mut self, x: Var, targets: &[usize]) -> Result<Var, AutodiffError> {
        let &[n, k] = self.shape(x) else {
            return Err(AutodiffError::shape(format!("cross_entropy expects [N,K], got {:?}", self.shape(x))));
        };
        if targets.len() != n {
            return Err(AutodiffError::shape(format!("cross_entropy: {n} rows, {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(AutodiffError::Index { index: bad, classes: k });
        }
        let src = self.value(x).data();
        let mut probs = vec![T::ZERO; n * k];
        let mut total = T::ZERO;
        for (i, &t) in targets.iter().enumerate() {
            let row = &src[i * k..(i + 1) * k];
            let mx = row.iter().copied().fold(row[0], T::max);
            let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            total += lse - row[t];
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
        }
        let loss = total / T::from_f64(n as f64);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                x,
                probs,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse accumulation from a scalar `loss`. Gradients of differentiable
    /// leaves add onto what earlier calls left there.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(AutodiffError::NotScalar(self.shape(loss).to_vec()));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut local: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        local[loss.0] = Some(vec![T::ONE]);
        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                accumulate_into(self.grads.entry(i).or_default(), g);
                continue;
            }
            self.propagate(i, &g, &mut local);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], local: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut send = |v: Var, d: Vec<T>| {
            if self.nodes[v.0].requires_grad {
                accumulate_opt(&mut local[v.0], d);
            }
        };
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let zeros_for = |v: Var| needs(v).then(|| vec![T::ZERO; self.nodes[v.0].value.numel()]);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                send(*a, g.iter().zip(vb).map(|(&d, &y)| d * y).collect());
                send(*b, g.iter().zip(va).map(|(&d, &x)| d * x).collect());
            }
            Op::Affine { x, scale } => send(*x, g.iter().map(|&d| d * *scale).collect()),
            Op::Sum(x) => send(*x, vec![g[0]; self.nodes[x.0].value.numel()]),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                send(*x, vec![g[0] / T::from_f64(n as f64); n]);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Relu(x) => send(
                *x,
                g.iter().zip(val(*x)).map(|(&d, &v)| if v > T::ZERO { d } else { T::ZERO }).collect(),
            ),
            Op::LeakyRelu { x, slope } => send(
                *x,
                g.iter().zip(val(*x)).map(|(&d, &v)| if v > T::ZERO { d } else { d * *slope }).collect(),
            ),
            Op::Tanh(x) => send(
                *x,
                g.iter().zip(node.value.data()).map(|(&d, &y)| d * (T::ONE - y * y)).collect(),
            ),
            Op::Sigmoid(x) => send(
                *x,
                g.iter().zip(node.value.data()).map(|(&d, &y)| d * y * (T::ONE - y)).collect(),
            ),
            Op::Softmax { x, outer, len, inner } => {
                let y = node.value.data();
                let mut dx = vec![T::ZERO; y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: T = (0..*len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..*len {
                            dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                send(*x, dx);
            }
            Op::Column { x, col } => {
                let &[n, k] = self.nodes[x.0].value.shape() else { unreachable!() };
                let mut dx = vec![T::ZERO; n * k];
                for r in 0..n {
                    dx[r * k + col] = g[r];
                }
                send(*x, dx);
            }
            Op::Linear { x, w, b } => {
                use super::scalar::{gemm, MatRef};
                let &[n, d] = self.nodes[x.0].value.shape() else { unreachable!() };
                let e = self.nodes[w.0].value.shape()[0];
                if let Some(mut dx) = zeros_for(*x) {
                    gemm(T::ONE, MatRef::new(g, n, e), MatRef::new(val(*w), e, d), T::ZERO, &mut dx);
                    send(*x, dx);
                }
                if let Some(mut dw) = zeros_for(*w) {
                    gemm(T::ONE, MatRef::new(g, n, e).t(), MatRef::new(val(*x), n, d), T::ZERO, &mut dw);
                    send(*w, dw);
                }
                if let Some(b) = b {
                    if let Some(mut db) = zeros_for(*b) {
                        for row in g.chunks(e) {
                            for (acc, &v) in db.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        send(*b, db);
                    }
                }
            }
            Op::Conv2d { x, w, b, geom, filters } => {
                let (mut dx, mut dw) = (zeros_for(*x), zeros_for(*w));
                let mut db = b.and_then(|b| zeros_for(b));
                let n = self.nodes[x.0].value.shape()[0];
                conv::conv2d_backward(
                    geom,
                    *filters,
                    n,
                    val(*x),
                    val(*w),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    send(*x, dx);
                }
                if let Some(dw) = dw {
                    send(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    send(*b, db);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom, cin } => {
                let (mut dx, mut dw) = (zeros_for(*x), zeros_for(*w));
                let mut db = b.and_then(|b| zeros_for(b));
                let n = self.nodes[x.0].value.shape()[0];
                conv::conv_transpose2d_backward(
                    geom,
                    *cin,
                    n,
                    val(*x),
                    val(*w),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    send(*x, dx);
                }
                if let Some(dw) = dw {
                    send(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    send(*b, db);
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if let Some(mut dx) = zeros_for(*x) {
                    for (&src, &d) in argmax.iter().zip(g) {
                        dx[src] += d;
                    }
                    send(*x, dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = self.nodes[x.0].value.shape();
                let (n, c) = (shape[0], shape[1]);
                let plane: usize = shape[2..].iter().product();
                let gam = val(*gamma);
                let planes = |ch: usize| (0..n).map(move |b| (b * c + ch) * plane..(b * c + ch + 1) * plane);
                let mut sum_dy = vec![T::ZERO; c];
                let mut sum_dy_xhat = vec![T::ZERO; c];
                for ch in 0..c {
                    for r in planes(ch) {
                        for (&d, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                            sum_dy[ch] += d;
                            sum_dy_xhat[ch] += d * xh;
                        }
                    }
                }
                if needs(*x) {
                    let m = T::from_f64((n * plane) as f64);
                    let mut dx = vec![T::ZERO; g.len()];
                    for ch in 0..c {
                        let k = gam[ch] * inv_std[ch];
                        let (mdy, mdyx) = (sum_dy[ch] / m, sum_dy_xhat[ch] / m);
                        for r in planes(ch) {
                            let it = dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]);
                            if *batch_stats {
                                it.for_each(|((o, &d), &xh)| *o = k * (d - mdy - xh * mdyx));
                            } else {
                                it.for_each(|((o, &d), _)| *o = k * d);
                            }
                        }
                    }
                    send(*x, dx);
                }
                send(*gamma, sum_dy_xhat);
                send(*beta, sum_dy);
            }
            Op::BceWithLogits { x, targets } => {
                let n = T::from_f64(targets.len() as f64);
                let dx = val(*x)
                    .iter()
                    .zip(targets)
                    .map(|(&l, &y)| g[0] * (sigmoid(l) - y) / n)
                    .collect();
                send(*x, dx);
            }
            Op::CrossEntropy { x, probs, targets } => {
                let k = self.nodes[x.0].value.shape()[1];
                let n = T::from_f64(targets.len() as f64);
                let mut dx: Vec<T> = probs.iter().map(|&p| g[0] * p / n).collect();
                for (i, &t) in targets.iter().enumerate() {
                    dx[i * k + t] -= g[0] / n;
                }
                send(*x, dx);
            }
        }
    }
}

fn accumulate_into<T: Scalar>(acc: &mut Vec<T>, d: Vec<T>) {
    if acc.is_empty() {
        *acc = d;
    } else {
        for (a, v) in acc.iter_mut().zip(d) {
            *a += v;
        }
    }
}

fn accumulate_opt<T: Scalar>(slot: &mut Option<Vec<T>>, d: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        None => *slot = Some(d),
    }
}

/// Logistic function evaluated without overflow for either sign.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}
