//! im2col-based 2-D convolution and its transpose (cross-correlation
//! semantics). Batches are processed in chunks whose column buffer stays
//! under [`COL_BUDGET`] elements.

use super::scalar::{gemm, MatRef};
use super::{AutodiffError, Scalar};

const COL_BUDGET: usize = 1 << 18;

/// Geometry of a convolution from `(channels, h, w)` to `(out_h, out_w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self, AutodiffError> {
        if stride == 0 || k == 0 {
            return Err(AutodiffError::shape("kernel size and stride must be positive"));
        }
        let span_h = h + 2 * pad;
        let span_w = w + 2 * pad;
        if span_h < k || span_w < k {
            return Err(AutodiffError::shape(format!(
                "kernel {k} larger than padded input {span_h}x{span_w}"
            )));
        }
        if (span_h - k) % stride != 0 || (span_w - k) % stride != 0 {
            return Err(AutodiffError::shape(format!(
                "input {h}x{w} with kernel {k}, stride {stride}, pad {pad} gives a fractional output size"
            )));
        }
        Ok(Self {
            channels,
            h,
            w,
            k,
            stride,
            pad,
            out_h: (span_h - k) / stride + 1,
            out_w: (span_w - k) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_size(&self) -> usize {
        self.channels * self.h * self.w
    }

    /// Visits every in-bounds run of taps as `(row, first_position, len,
    /// first_input_index)`: positions advance by one and input indices by
    /// the stride.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (k, s, p) = (self.k, self.stride, self.pad);
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let ox_lo = if p > kj { (p - kj).div_ceil(s) } else { 0 };
                    let ox_hi = if self.w + p > kj { (self.w + p - kj).div_ceil(s).min(self.out_w) } else { 0 };
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let ix = ox_lo * s + kj - p;
                        let base = (c * self.h + iy as usize) * self.w + ix;
                        f(row, oy * self.out_w + ox_lo, ox_hi - ox_lo, base);
                    }
                }
            }
        }
    }
}

fn chunk_len(n: usize, per_image: usize) -> usize {
    (COL_BUDGET / per_image.max(1)).clamp(1, n.max(1))
}

/// Writes one image's columns into `cols` (`rows x ld`) starting at column `off`.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T], ld: usize, off: usize) {
    let p = g.positions();
    for r in 0..g.rows() {
        cols[r * ld + off..r * ld + off + p].fill(T::ZERO);
    }
    let s = g.stride;
    g.for_each_run(|row, pos, len, src| {
        let dst = &mut cols[row * ld + off + pos..row * ld + off + pos + len];
        if s == 1 {
            dst.copy_from_slice(&x[src..src + len]);
        } else {
            for (j, d) in dst.iter_mut().enumerate() {
                *d = x[src + j * s];
            }
        }
    });
}

/// Scatter-adds one image's columns back onto `dx`.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], ld: usize, off: usize, dx: &mut [T]) {
    let s = g.stride;
    g.for_each_run(|row, pos, len, dst| {
        let src = &cols[row * ld + off + pos..row * ld + off + pos + len];
        if s == 1 {
            for (d, &v) in dx[dst..dst + len].iter_mut().zip(src) {
                *d += v;
            }
        } else {
            for (j, &v) in src.iter().enumerate() {
                dx[dst + j * s] += v;
            }
        }
    });
}

/// Copies `[n, c, p]` images `n0..n1` into a `[c, (n1-n0) p]` buffer.
fn gather_channels<T: Scalar>(src: &[T], c: usize, p: usize, n0: usize, n1: usize, dst: &mut [T]) {
    let ld = (n1 - n0) * p;
    for n in n0..n1 {
        for ch in 0..c {
            let from = &src[(n * c + ch) * p..(n * c + ch + 1) * p];
            let at = ch * ld + (n - n0) * p;
            dst[at..at + p].copy_from_slice(from);
        }
    }
}

fn scatter_channels<T: Scalar>(src: &[T], c: usize, p: usize, n0: usize, n1: usize, dst: &mut [T], bias: Option<&[T]>) {
    let ld = (n1 - n0) * p;
    for n in n0..n1 {
        for ch in 0..c {
            let b = bias.map_or(T::ZERO, |b| b[ch]);
            let at = ch * ld + (n - n0) * p;
            let out = &mut dst[(n * c + ch) * p..(n * c + ch + 1) * p];
            for (o, &v) in out.iter_mut().zip(&src[at..at + p]) {
                *o = v + b;
            }
        }
    }
}

/// Shape bookkeeping for `conv2d`: returns `(geometry, filters, batch)`.
pub fn conv2d_geom(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<(ConvGeom, usize, usize), AutodiffError> {
    let [n, c, h, w] = dims4(input, "conv2d input")?;
    let [f, wc, kh, kw] = dims4(weight, "conv2d weight")?;
    if wc != c || kh != kw {
        return Err(AutodiffError::shape(format!(
            "conv2d weight {weight:?} does not match input {input:?} (square kernel, matching channels)"
        )));
    }
    Ok((ConvGeom::new(c, h, w, kh, stride, pad)?, f, n))
}

/// Shape bookkeeping for `conv_transpose2d`. The returned geometry is that
/// of the adjoint convolution, from the output back to the input.
pub fn conv_transpose2d_geom(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<(ConvGeom, usize, usize), AutodiffError> {
    let [n, cin, h, w] = dims4(input, "conv_transpose2d input")?;
    let [wc, cout, kh, kw] = dims4(weight, "conv_transpose2d weight")?;
    if wc != cin || kh != kw {
        return Err(AutodiffError::shape(format!(
            "conv_transpose2d weight {weight:?} does not match input {input:?}"
        )));
    }
    if stride == 0 || (h - 1) * stride + kh < 2 * pad + 1 || (w - 1) * stride + kw < 2 * pad + 1 {
        return Err(AutodiffError::shape(format!(
            "conv_transpose2d input {h}x{w} with kernel {kh}, stride {stride}, pad {pad} has empty output"
        )));
    }
    let out_h = (h - 1) * stride + kh - 2 * pad;
    let out_w = (w - 1) * stride + kw - 2 * pad;
    let g = ConvGeom::new(cout, out_h, out_w, kh, stride, pad)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    Ok((g, cin, n))
}

pub fn dims4(shape: &[usize], what: &str) -> Result<[usize; 4], AutodiffError> {
    shape
        .try_into()
        .map_err(|_| AutodiffError::shape(format!("{what} must be rank 4, got {shape:?}")))
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, filters: usize, n: usize, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (rows, p) = (g.rows(), g.positions());
    let mut out = vec![T::ZERO; n * filters * p];
    let step = chunk_len(n, rows * p);
    let mut n0 = 0;
    while n0 < n {
        let n1 = (n0 + step).min(n);
        let ld = (n1 - n0) * p;
        let mut cols = vec![T::ZERO; rows * ld];
        for i in n0..n1 {
            im2col(g, &x[i * g.in_size()..(i + 1) * g.in_size()], &mut cols, ld, (i - n0) * p);
        }
        let mut buf = vec![T::ZERO; filters * ld];
        gemm(T::ONE, MatRef::new(weight, filters, rows), MatRef::new(&cols, rows, ld), T::ZERO, &mut buf);
        scatter_channels(&buf, filters, p, n0, n1, &mut out, bias);
        n0 = n1;
    }
    out
}

/// Accumulates gradients of `conv2d` into whichever of `dx`, `dw`, `db` are given.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    filters: usize,
    n: usize,
    x: &[T],
    weight: &[T],
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (rows, p) = (g.rows(), g.positions());
    if let Some(db) = db {
        accumulate_bias(dout, filters, p, db);
    }
    if dx.is_none() && dw.is_none() {
        return;
    }
    let step = chunk_len(n, rows * p);
    let mut n0 = 0;
    while n0 < n {
        let n1 = (n0 + step).min(n);
        let ld = (n1 - n0) * p;
        let mut dbuf = vec![T::ZERO; filters * ld];
        gather_channels(dout, filters, p, n0, n1, &mut dbuf);
        let mut cols = vec![T::ZERO; rows * ld];
        if let Some(dw) = dw.as_deref_mut() {
            for i in n0..n1 {
                im2col(g, &x[i * g.in_size()..(i + 1) * g.in_size()], &mut cols, ld, (i - n0) * p);
            }
            gemm(T::ONE, MatRef::new(&dbuf, filters, ld), MatRef::new(&cols, rows, ld).t(), T::ONE, dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(T::ONE, MatRef::new(weight, filters, rows).t(), MatRef::new(&dbuf, filters, ld), T::ZERO, &mut cols);
            for i in n0..n1 {
                col2im(g, &cols, ld, (i - n0) * p, &mut dx[i * g.in_size()..(i + 1) * g.in_size()]);
            }
        }
        n0 = n1;
    }
}

/// `g` is the adjoint geometry from [`conv_transpose2d_geom`]; `cin` is the
/// input channel count.
pub fn conv_transpose2d_forward<T: Scalar>(g: &ConvGeom, cin: usize, n: usize, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (rows, p) = (g.rows(), g.positions());
    let out_size = g.in_size();
    let mut out = vec![T::ZERO; n * out_size];
    let step = chunk_len(n, rows * p);
    let mut n0 = 0;
    while n0 < n {
        let n1 = (n0 + step).min(n);
        let ld = (n1 - n0) * p;
        let mut xbuf = vec![T::ZERO; cin * ld];
        gather_channels(x, cin, p, n0, n1, &mut xbuf);
        let mut cols = vec![T::ZERO; rows * ld];
        gemm(T::ONE, MatRef::new(weight, cin, rows).t(), MatRef::new(&xbuf, cin, ld), T::ZERO, &mut cols);
        for i in n0..n1 {
            col2im(g, &cols, ld, (i - n0) * p, &mut out[i * out_size..(i + 1) * out_size]);
        }
        n0 = n1;
    }
    if let Some(b) = bias {
        let plane = g.h * g.w;
        for img in out.chunks_mut(out_size) {
            for (ch, chan) in img.chunks_mut(plane).enumerate() {
                chan.iter_mut().for_each(|v| *v += b[ch]);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    g: &ConvGeom,
    cin: usize,
    n: usize,
    x: &[T],
    weight: &[T],
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (rows, p) = (g.rows(), g.positions());
    let out_size = g.in_size();
    if let Some(db) = db {
        accumulate_bias(dout, g.channels, g.h * g.w, db);
    }
    if dx.is_none() && dw.is_none() {
        return;
    }
    let step = chunk_len(n, rows * p);
    let mut n0 = 0;
    while n0 < n {
        let n1 = (n0 + step).min(n);
        let ld = (n1 - n0) * p;
        let mut cols = vec![T::ZERO; rows * ld];
        for i in n0..n1 {
            im2col(g, &dout[i * out_size..(i + 1) * out_size], &mut cols, ld, (i - n0) * p);
        }
        if let Some(dw) = dw.as_deref_mut() {
            let mut xbuf = vec![T::ZERO; cin * ld];
            gather_channels(x, cin, p, n0, n1, &mut xbuf);
            gemm(T::ONE, MatRef::new(&xbuf, cin, ld), MatRef::new(&cols, rows, ld).t(), T::ONE, dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let mut dbuf = vec![T::ZERO; cin * ld];
            gemm(T::ONE, MatRef::new(weight, cin, rows), MatRef::new(&cols, rows, ld), T::ZERO, &mut dbuf);
            for i in n0..n1 {
                for ch in 0..cin {
                    let at = ch * ld + (i - n0) * p;
                    let dst = &mut dx[(i * cin + ch) * p..(i * cin + ch + 1) * p];
                    for (d, &v) in dst.iter_mut().zip(&dbuf[at..at + p]) {
                        *d += v;
                    }
                }
            }
        }
        n0 = n1;
    }
}

fn accumulate_bias<T: Scalar>(dout: &[T], channels: usize, plane: usize, db: &mut [T]) {
    for img in dout.chunks(channels * plane) {
        for (ch, chan) in img.chunks(plane).enumerate() {
            db[ch] += chan.iter().copied().sum::<T>();
        }
    }
}
