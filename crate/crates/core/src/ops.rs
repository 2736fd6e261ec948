//! Differentiable primitives.
//!
//! Every forward function here is pure. The matching `*_backward` function
//! takes the upstream gradient and returns gradients for each differentiable
//! input (a vector-Jacobian product). [`crate::graph::Graph`] composes these.

use crate::error::{Error, Result};
use crate::tensor::{lit, Real, Tensor};

/// Epsilon added to the variance in [`instance_norm`].
pub const NORM_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// affine / linear

/// `out[j] = sum_i w[j, i] * x[i] + b[j]` for a single vector.
pub fn affine<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 1 {
        return Err(Error::shape(format!(
            "affine expects a vector, got {:?}",
            x.shape()
        )));
    }
    let out = linear_rows(x, w, b)?;
    Ok(out)
}

/// Applies the affine map `w x + b` to every row along the last axis.
///
/// `x` has shape `[.., d_in]`, `w` is `[d_out, d_in]`, `b` is `[d_out]`; the
/// result has shape `[.., d_out]`.
pub fn linear_rows<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (d_out, d_in) = w.dims2()?;
    if x.last_dim() != d_in || x.rank() == 0 {
        return Err(Error::shape(format!(
            "linear: input {:?} does not match weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if b.shape() != [d_out] {
        return Err(Error::shape(format!(
            "linear: bias {:?} does not match weight {:?}",
            b.shape(),
            w.shape()
        )));
    }
    let rows = x.len() / d_in;
    let mut out = Vec::with_capacity(rows * d_out);
    let wd = w.data();
    for xr in x.data().chunks_exact(d_in) {
        for (wr, &bj) in wd.chunks_exact(d_in).zip(b.data()) {
            out.push(dot(wr, xr) + bj);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::new(&shape, out)
}

/// Gradients of [`linear_rows`] with respect to `(x, w, b)`.
pub fn linear_rows_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[d_out]);
    let wd = w.data();
    for ((xr, gr), gxr) in x
        .data()
        .chunks_exact(d_in)
        .zip(grad_out.data().chunks_exact(d_out))
        .zip(gx.data_mut().chunks_exact_mut(d_in))
    {
        for (j, &g) in gr.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            axpy(g, &wd[j * d_in..(j + 1) * d_in], gxr);
            axpy(g, xr, &mut gw.data_mut()[j * d_in..(j + 1) * d_in]);
            gb.data_mut()[j] = gb.data()[j] + g;
        }
    }
    (gx, gw, gb)
}

/// A 1×1 convolution over the feature axis of an `H×L×D` tensor.
pub fn conv1x1<T: Real>(t: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    t.dims3()?;
    linear_rows(t, w, b)
}

// ---------------------------------------------------------------------------
// matmul

/// `op(a) · op(b)` where `op` optionally transposes a matrix.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    let (ar, ac) = a.dims2()?;
    let (br, bc) = b.dims2()?;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul: inner dims differ ({:?}{} · {:?}{})",
            a.shape(),
            if ta { "ᵀ" } else { "" },
            b.shape(),
            if tb { "ᵀ" } else { "" }
        )));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::zero(); m * n];
    match (ta, tb) {
        (false, false) => {
            for r in 0..m {
                let orow = &mut out[r * n..(r + 1) * n];
                for kk in 0..k {
                    axpy(ad[r * k + kk], &bd[kk * n..(kk + 1) * n], orow);
                }
            }
        }
        (false, true) => {
            for r in 0..m {
                let arow = &ad[r * k..(r + 1) * k];
                for c in 0..n {
                    out[r * n + c] = dot(arow, &bd[c * k..(c + 1) * k]);
                }
            }
        }
        (true, false) => {
            for kk in 0..k {
                let brow = &bd[kk * n..(kk + 1) * n];
                for r in 0..m {
                    axpy(ad[kk * m + r], brow, &mut out[r * n..(r + 1) * n]);
                }
            }
        }
        (true, true) => {
            for r in 0..m {
                for c in 0..n {
                    let mut acc = T::zero();
                    for kk in 0..k {
                        acc = acc + ad[kk * m + r] * bd[c * k + kk];
                    }
                    out[r * n + c] = acc;
                }
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// Gradients of [`matmul`] with respect to `(a, b)`.
pub fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    ta: bool,
    tb: bool,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok(match (ta, tb) {
        (false, false) => (matmul(g, b, false, true)?, matmul(a, g, true, false)?),
        (false, true) => (matmul(g, b, false, false)?, matmul(g, a, true, false)?),
        (true, false) => (matmul(b, g, false, true)?, matmul(a, g, false, false)?),
        (true, true) => (matmul(b, g, true, true)?, matmul(g, a, true, true)?),
    })
}

// ---------------------------------------------------------------------------
// softmax

/// Which index a softmax normalizes over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoftmaxAxis {
    /// Normalize down each column: every column sums to one.
    Rows,
    /// Normalize across each row: every row sums to one.
    Cols,
}

/// Numerically stable softmax of a matrix along one axis.
pub fn softmax_axis<T: Real>(m: &Tensor<T>, axis: SoftmaxAxis) -> Result<Tensor<T>> {
    let (rows, cols) = m.dims2()?;
    let mut out = m.clone();
    let (slices, len, slice_stride, elem_stride) = match axis {
        SoftmaxAxis::Cols => (rows, cols, cols, 1),
        SoftmaxAxis::Rows => (cols, rows, 1, cols),
    };
    let data = out.data_mut();
    for s in 0..slices {
        let base = s * slice_stride;
        let mut max = T::neg_infinity();
        for e in 0..len {
            max = max.max(data[base + e * elem_stride]);
        }
        let mut sum = T::zero();
        for e in 0..len {
            let v = (data[base + e * elem_stride] - max).exp();
            data[base + e * elem_stride] = v;
            sum = sum + v;
        }
        for e in 0..len {
            let idx = base + e * elem_stride;
            data[idx] = data[idx] / sum;
        }
    }
    Ok(out)
}

/// Gradient of [`softmax_axis`] given its output `y`.
pub fn softmax_axis_backward<T: Real>(
    y: &Tensor<T>,
    g: &Tensor<T>,
    axis: SoftmaxAxis,
) -> Tensor<T> {
    let (rows, cols) = (y.shape()[0], y.shape()[1]);
    let (slices, len, slice_stride, elem_stride) = match axis {
        SoftmaxAxis::Cols => (rows, cols, cols, 1),
        SoftmaxAxis::Rows => (cols, rows, 1, cols),
    };
    let mut gx = Tensor::zeros(y.shape());
    let (yd, gd) = (y.data(), g.data());
    let out = gx.data_mut();
    for s in 0..slices {
        let base = s * slice_stride;
        let mut inner = T::zero();
        for e in 0..len {
            let idx = base + e * elem_stride;
            inner = inner + yd[idx] * gd[idx];
        }
        for e in 0..len {
            let idx = base + e * elem_stride;
            out[idx] = yd[idx] * (gd[idx] - inner);
        }
    }
    gx
}

/// Softmax of a vector.
pub fn softmax_vec<T: Real>(v: &[T]) -> Vec<T> {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &e| a + e);
    exps.into_iter().map(|e| e / sum).collect()
}

// ---------------------------------------------------------------------------
// activations

pub fn relu<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at zero is zero.
pub fn relu_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    // Split by sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.map(sigmoid_scalar)
}

/// Gradient of [`sigmoid`] given its output `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(g.data())
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect();
    Tensor::new(y.shape(), data).expect("same shape")
}

// ---------------------------------------------------------------------------
// pooling

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpatialAxis {
    /// The block axis.
    H,
    /// The position axis.
    L,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Reduced output of [`pool_axis_indexed`]: the pooled tensor and, for max
/// pooling, the flat source index of every output element.
#[derive(Clone, Debug)]
pub struct Pooled<T> {
    pub value: Tensor<T>,
    pub argmax: Vec<usize>,
}

fn pool_plan(
    shape: (usize, usize, usize),
    axes: &[SpatialAxis],
) -> Result<(bool, bool, Vec<usize>)> {
    if axes.is_empty() {
        return Err(Error::argument("pooling needs at least one axis"));
    }
    let over_h = axes.contains(&SpatialAxis::H);
    let over_l = axes.contains(&SpatialAxis::L);
    let (h, l, d) = shape;
    if (over_h && h == 0) || (over_l && l == 0) {
        return Err(Error::argument("pooling over an empty extent"));
    }
    let out_shape = match (over_h, over_l) {
        (true, true) => vec![d],
        (true, false) => vec![l, d],
        (false, true) => vec![h, d],
        (false, false) => unreachable!(),
    };
    Ok((over_h, over_l, out_shape))
}

/// Average or max pooling of an `H×L×D` tensor over a subset of `{h, l}`.
/// Non-reduced axes keep their order; the feature axis is always kept.
pub fn pool_axis<T: Real>(
    t: &Tensor<T>,
    axes: &[SpatialAxis],
    mode: PoolMode,
) -> Result<Tensor<T>> {
    Ok(pool_axis_indexed(t, axes, mode)?.value)
}

pub fn pool_axis_indexed<T: Real>(
    t: &Tensor<T>,
    axes: &[SpatialAxis],
    mode: PoolMode,
) -> Result<Pooled<T>> {
    let (h, l, d) = t.dims3()?;
    let (over_h, over_l, out_shape) = pool_plan((h, l, d), axes)?;
    let out_len: usize = out_shape.iter().product();
    let count = if over_h { h } else { 1 } * if over_l { l } else { 1 };
    let src = t.data();
    let mut out = vec![
        match mode {
            PoolMode::Avg => T::zero(),
            PoolMode::Max => T::neg_infinity(),
        };
        out_len
    ];
    let mut argmax = match mode {
        PoolMode::Avg => Vec::new(),
        PoolMode::Max => vec![usize::MAX; out_len],
    };
    for hh in 0..h {
        for ll in 0..l {
            let o_row = match (over_h, over_l) {
                (true, true) => 0,
                (true, false) => ll,
                (false, true) => hh,
                _ => unreachable!(),
            };
            let base = (hh * l + ll) * d;
            for dd in 0..d {
                let v = src[base + dd];
                let o = o_row * d + dd;
                match mode {
                    PoolMode::Avg => out[o] = out[o] + v,
                    PoolMode::Max => {
                        // strict comparison keeps the first maximum on ties
                        if argmax[o] == usize::MAX || v > out[o] {
                            out[o] = v;
                            argmax[o] = base + dd;
                        }
                    }
                }
            }
        }
    }
    if mode == PoolMode::Avg {
        let inv = T::one() / lit::<T>(count as f64);
        out.iter_mut().for_each(|v| *v = *v * inv);
    }
    Ok(Pooled {
        value: Tensor::new(&out_shape, out)?,
        argmax,
    })
}

/// Gradient of pooling with respect to its `in_shape` input.
pub fn pool_axis_backward<T: Real>(
    in_shape: &[usize],
    axes: &[SpatialAxis],
    mode: PoolMode,
    argmax: &[usize],
    g: &Tensor<T>,
) -> Tensor<T> {
    let (h, l, d) = (in_shape[0], in_shape[1], in_shape[2]);
    let over_h = axes.contains(&SpatialAxis::H);
    let over_l = axes.contains(&SpatialAxis::L);
    let mut gx = Tensor::zeros(in_shape);
    match mode {
        PoolMode::Max => {
            for (&src, &gv) in argmax.iter().zip(g.data()) {
                gx.data_mut()[src] = gx.data()[src] + gv;
            }
        }
        PoolMode::Avg => {
            let count = if over_h { h } else { 1 } * if over_l { l } else { 1 };
            let inv = T::one() / lit::<T>(count as f64);
            let gd = g.data();
            let out = gx.data_mut();
            for hh in 0..h {
                for ll in 0..l {
                    let o_row = match (over_h, over_l) {
                        (true, true) => 0,
                        (true, false) => ll,
                        _ => hh,
                    };
                    let base = (hh * l + ll) * d;
                    for dd in 0..d {
                        out[base + dd] = gd[o_row * d + dd] * inv;
                    }
                }
            }
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// convolution

/// A 2D convolution kernel over `(h, l)` with channels on the last axis.
///
/// `weight` has shape `[k_h, k_l, d_in, d_out]`, so `K(m, n, d, d')` sits at
/// `((m * k_l + n) * d_in + d) * d_out + d'`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvKernel<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let dims = conv_dims(&weight)?;
        if bias.shape() != [dims.3] {
            return Err(Error::shape(format!(
                "conv bias {:?} does not match {} output channels",
                bias.shape(),
                dims.3
            )));
        }
        Ok(ConvKernel { weight, bias })
    }

    pub fn zeros(k_h: usize, k_l: usize, d_in: usize, d_out: usize) -> Self {
        ConvKernel {
            weight: Tensor::zeros(&[k_h, k_l, d_in, d_out]),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    /// `(k_h, k_l, d_in, d_out)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.weight.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn set(&mut self, m: usize, n: usize, d: usize, d_out: usize, v: T) {
        let (_, kl, di, dd) = self.dims();
        self.weight.data_mut()[((m * kl + n) * di + d) * dd + d_out] = v;
    }
}

fn conv_dims<T: Real>(w: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match *w.shape() {
        [a, b, c, d] if a > 0 && b > 0 => Ok((a, b, c, d)),
        _ => Err(Error::shape(format!(
            "conv kernel must be [k_h, k_l, d_in, d_out], got {:?}",
            w.shape()
        ))),
    }
}

/// Leading zero padding for one spatial axis: half the dilated span.
pub fn conv_offset(k: usize, dilation: usize) -> usize {
    ((k - 1) * dilation).div_ceil(2)
}

/// Dilated "same" convolution of an `H×L×D` tensor.
///
/// `B(i, j, d') = bias[d'] + Σ_{m,n,d} A(i + m·r − o_h, j + n·r − o_l, d)·K(m, n, d, d')`
/// with zero padding, where `o = conv_offset(k, r)`.
pub fn conv2d_dilated<T: Real>(
    t: &Tensor<T>,
    kernel: &ConvKernel<T>,
    dilation: usize,
) -> Result<Tensor<T>> {
    conv2d_forward(t, &kernel.weight, &kernel.bias, dilation)
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    r: usize,
) -> Result<Tensor<T>> {
    if r < 1 {
        return Err(Error::argument("dilation rate must be at least 1"));
    }
    let (h, l, d_in) = x.dims3()?;
    let (kh, kl, wd_in, d_out) = conv_dims(w)?;
    if wd_in != d_in || b.shape() != [d_out] {
        return Err(Error::shape(format!(
            "conv: input {:?}, kernel {:?}, bias {:?} disagree",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (oh, ol) = (conv_offset(kh, r) as isize, conv_offset(kl, r) as isize);
    let xd = x.data();
    let wd = w.data();
    let mut out = Vec::with_capacity(h * l * d_out);
    for _ in 0..h * l {
        out.extend_from_slice(b.data());
    }
    for i in 0..h {
        for m in 0..kh {
            let ii = i as isize + (m * r) as isize - oh;
            if ii < 0 || ii >= h as isize {
                continue;
            }
            let ii = ii as usize;
            for j in 0..l {
                let orow = &mut out[(i * l + j) * d_out..(i * l + j + 1) * d_out];
                for n in 0..kl {
                    let jj = j as isize + (n * r) as isize - ol;
                    if jj < 0 || jj >= l as isize {
                        continue;
                    }
                    let xrow = &xd[(ii * l + jj as usize) * d_in..][..d_in];
                    let wbase = (m * kl + n) * d_in * d_out;
                    for (dd, &a) in xrow.iter().enumerate() {
                        axpy(a, &wd[wbase + dd * d_out..][..d_out], orow);
                    }
                }
            }
        }
    }
    Tensor::new(&[h, l, d_out], out)
}

/// Gradients of a dilated convolution with respect to `(input, weight, bias)`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    r: usize,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (h, l, d_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kl, d_out) = (w.shape()[0], w.shape()[1], w.shape()[3]);
    let (oh, ol) = (conv_offset(kh, r) as isize, conv_offset(kl, r) as isize);
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = vec![T::zero(); d_out];
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    for grow in gd.chunks_exact(d_out) {
        for (b, &v) in gb.iter_mut().zip(grow) {
            *b = *b + v;
        }
    }
    {
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        for i in 0..h {
            for m in 0..kh {
                let ii = i as isize + (m * r) as isize - oh;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                let ii = ii as usize;
                for j in 0..l {
                    let grow = &gd[(i * l + j) * d_out..][..d_out];
                    for n in 0..kl {
                        let jj = j as isize + (n * r) as isize - ol;
                        if jj < 0 || jj >= l as isize {
                            continue;
                        }
                        let xoff = (ii * l + jj as usize) * d_in;
                        let wbase = (m * kl + n) * d_in * d_out;
                        for dd in 0..d_in {
                            let wrow = wbase + dd * d_out;
                            gxd[xoff + dd] = gxd[xoff + dd] + dot(&wd[wrow..wrow + d_out], grow);
                            axpy(xd[xoff + dd], grow, &mut gwd[wrow..wrow + d_out]);
                        }
                    }
                }
            }
        }
    }
    (gx, gw, Tensor::vector(gb))
}

// ---------------------------------------------------------------------------
// normalization

/// Saved statistics of a normalization forward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Per-column normalization of an `R×D` matrix over its rows followed by a
/// learned per-column scale and shift.
pub fn instance_norm<T: Real>(
    g: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(instance_norm_cached(g, gamma, beta)?.0)
}

pub fn instance_norm_cached<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (rows, cols) = x.dims2()?;
    if rows < 2 {
        return Err(Error::argument(
            "normalization needs at least two rows to define a variance",
        ));
    }
    if gamma.shape() != [cols] || beta.shape() != [cols] {
        return Err(Error::shape(format!(
            "normalization scale/shift must have {cols} entries"
        )));
    }
    let xd = x.data();
    let n = lit::<T>(rows as f64);
    let eps = lit::<T>(NORM_EPS);
    let mut normalized = Tensor::zeros(x.shape());
    let mut out = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(cols);
    for c in 0..cols {
        let mean = (0..rows).fold(T::zero(), |a, r| a + xd[r * cols + c]) / n;
        let var = (0..rows).fold(T::zero(), |a, r| {
            let dv = xd[r * cols + c] - mean;
            a + dv * dv
        }) / n;
        let inv = T::one() / (var + eps).sqrt();
        inv_std.push(inv);
        for r in 0..rows {
            let xh = (xd[r * cols + c] - mean) * inv;
            normalized.data_mut()[r * cols + c] = xh;
            out.data_mut()[r * cols + c] = gamma.data()[c] * xh + beta.data()[c];
        }
    }
    Ok((
        out,
        NormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Gradients of [`instance_norm`] with respect to `(x, gamma, beta)`.
pub fn instance_norm_backward<T: Real>(
    cache: &NormCache<T>,
    gamma: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (rows, cols) = (g.shape()[0], g.shape()[1]);
    let n = lit::<T>(rows as f64);
    let xh = cache.normalized.data();
    let gd = g.data();
    let mut gx = Tensor::zeros(g.shape());
    let mut gg = Tensor::zeros(&[cols]);
    let mut gbeta = Tensor::zeros(&[cols]);
    for c in 0..cols {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for r in 0..rows {
            let i = r * cols + c;
            sum_g = sum_g + gd[i];
            sum_gx = sum_gx + gd[i] * xh[i];
        }
        gbeta.data_mut()[c] = sum_g;
        gg.data_mut()[c] = sum_gx;
        let scale = gamma.data()[c] * cache.inv_std[c];
        let mean_g = sum_g / n;
        let mean_gx = sum_gx / n;
        for r in 0..rows {
            let i = r * cols + c;
            gx.data_mut()[i] = scale * (gd[i] - mean_g - xh[i] * mean_gx);
        }
    }
    (gx, gg, gbeta)
}

// ---------------------------------------------------------------------------
// shape-level helpers used by the attention and gating stages

/// Divides each `(h, d)` column of an `H×L×D` tensor by its sum over `l`.
pub fn normalize_positions<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, l, d) = t.dims3()?;
    let mut out = t.clone();
    let od = out.data_mut();
    for hh in 0..h {
        for dd in 0..d {
            let mut sum = T::zero();
            for ll in 0..l {
                sum = sum + od[(hh * l + ll) * d + dd];
            }
            for ll in 0..l {
                let i = (hh * l + ll) * d + dd;
                od[i] = od[i] / sum;
            }
        }
    }
    Ok(out)
}

/// Gradient of [`normalize_positions`] given input `x` and output `y`.
pub fn normalize_positions_backward<T: Real>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    g: &Tensor<T>,
) -> Tensor<T> {
    let (h, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (xd, yd, gd) = (x.data(), y.data(), g.data());
    let mut gx = Tensor::zeros(x.shape());
    for hh in 0..h {
        for dd in 0..d {
            let mut sum = T::zero();
            let mut gy = T::zero();
            for ll in 0..l {
                let i = (hh * l + ll) * d + dd;
                sum = sum + xd[i];
                gy = gy + gd[i] * yd[i];
            }
            for ll in 0..l {
                let i = (hh * l + ll) * d + dd;
                gx.data_mut()[i] = (gd[i] - gy) / sum;
            }
        }
    }
    gx
}

/// Per-channel outer product: `out[h, l, d] = a[h, d] * b[l, d]`.
pub fn outer_channel<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, d) = a.dims2()?;
    let (l, d2) = b.dims2()?;
    if d != d2 {
        return Err(Error::shape(format!(
            "outer product channel mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Vec::with_capacity(h * l * d);
    for ar in a.data().chunks_exact(d) {
        for br in b.data().chunks_exact(d) {
            out.extend(ar.iter().zip(br).map(|(&x, &y)| x * y));
        }
    }
    Tensor::tensor3(h, l, d, out)
}

pub fn outer_channel_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (h, d) = (a.shape()[0], a.shape()[1]);
    let l = b.shape()[0];
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    for hh in 0..h {
        for ll in 0..l {
            for dd in 0..d {
                let gv = gd[(hh * l + ll) * d + dd];
                ga.data_mut()[hh * d + dd] = ga.data()[hh * d + dd] + gv * bd[ll * d + dd];
                gb.data_mut()[ll * d + dd] = gb.data()[ll * d + dd] + gv * ad[hh * d + dd];
            }
        }
    }
    (ga, gb)
}

// ---------------------------------------------------------------------------
// small kernels

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + alpha * xv;
    }
}
