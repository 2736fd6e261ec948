//! A small reverse-mode tape over the primitives in [`crate::ops`].
//!
//! Each call on [`Graph`] evaluates one primitive eagerly, stores the result
//! and whatever the backward pass needs, and returns a [`Var`] handle.
//! [`Graph::backward`] walks the tape in reverse and returns [`Gradients`].

use std::fmt;

use crate::error::{Error, Result};
use crate::ops::{self, NormCache, PoolMode, SoftmaxAxis, SpatialAxis};
use crate::params::ParamSet;
use crate::tensor::{lit, Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used to name ops in gradient-check reports and to target
/// fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Linear,
    MatMul,
    Softmax,
    Relu,
    Sigmoid,
    Abs,
    Add,
    Sub,
    Mul,
    Scale,
    Pool,
    Conv2d,
    InstanceNorm,
    Concat,
    Slice,
    Reshape,
    Broadcast,
    Outer,
    NormalizePositions,
    SoftmaxCrossEntropy,
    WeightedSum,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::Linear,
        OpKind::MatMul,
        OpKind::Softmax,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Abs,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Pool,
        OpKind::Conv2d,
        OpKind::InstanceNorm,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Reshape,
        OpKind::Broadcast,
        OpKind::Outer,
        OpKind::NormalizePositions,
        OpKind::SoftmaxCrossEntropy,
        OpKind::WeightedSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Linear => "linear",
            OpKind::MatMul => "matmul",
            OpKind::Softmax => "softmax",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Abs => "abs",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Pool => "pool",
            OpKind::Conv2d => "conv2d",
            OpKind::InstanceNorm => "instance_norm",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Reshape => "reshape",
            OpKind::Broadcast => "broadcast",
            OpKind::Outer => "outer",
            OpKind::NormalizePositions => "normalize_positions",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            OpKind::WeightedSum => "weighted_sum",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Softmax {
        x: Var,
        axis: SoftmaxAxis,
    },
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Pool {
        x: Var,
        axes: Vec<SpatialAxis>,
        mode: PoolMode,
        argmax: Vec<usize>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache<T>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Broadcast(Var),
    Outer(Var, Var),
    NormalizePositions(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
    WeightedSum {
        x: Var,
        weights: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Linear { .. } => OpKind::Linear,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Abs(_) => OpKind::Abs,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Pool { .. } => OpKind::Pool,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::InstanceNorm { .. } => OpKind::InstanceNorm,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Broadcast(_) => OpKind::Broadcast,
            Op::Outer(..) => OpKind::Outer,
            Op::NormalizePositions(_) => OpKind::NormalizePositions,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::WeightedSum { .. } => OpKind::WeightedSum,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Parameters of a [`ParamSet`] recorded as leaves on a graph.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
    names: std::collections::HashMap<String, usize>,
}

impl BoundParams {
    /// Binds `names[i]` to `vars[i]`.
    pub fn from_parts(names: &[String], vars: Vec<Var>) -> Result<Self> {
        if names.len() != vars.len() {
            return Err(Error::shape("parameter names and handles differ in count"));
        }
        let names = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(BoundParams { vars, names })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::State(format!("parameter `{name}` is not bound")))
    }

    /// Leaf handles in parameter-set order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Flips the sign of every gradient that flows back through ops of
    /// `kind`. Only useful as a negative control for gradient checking.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Distance from the recorded point to the nearest non-differentiable
    /// configuration: the smallest `|input|` of any relu/abs, and the
    /// smallest gap between the two largest entries of any max-pool window.
    /// `None` when the tape has no such op.
    pub fn kink_margin(&self) -> Option<T> {
        let mut margin: Option<T> = None;
        let mut note = |m: T| margin = Some(margin.map_or(m, |cur| cur.min(m)));
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) | Op::Abs(x) => {
                    self.value(*x).data().iter().for_each(|v| note(v.abs()));
                }
                Op::Pool {
                    x,
                    axes,
                    mode: PoolMode::Max,
                    argmax,
                } => {
                    let mut rest = self.value(*x).clone();
                    for &i in argmax {
                        rest.data_mut()[i] = T::neg_infinity();
                    }
                    let Ok(second) = ops::pool_axis(&rest, axes, PoolMode::Max) else {
                        continue;
                    };
                    for (&top, &next) in node.value.data().iter().zip(second.data()) {
                        if next.is_finite() {
                            note(top - next);
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records every parameter of `params` as a leaf.
    pub fn bind(&mut self, params: &ParamSet<T>) -> BoundParams {
        let mut vars = Vec::with_capacity(params.len());
        let mut names = std::collections::HashMap::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            vars.push(self.leaf(p.value.clone()));
            names.insert(p.name.clone(), i);
        }
        BoundParams { vars, names }
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::linear_rows(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b), ta, tb)?;
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }))
    }

    pub fn softmax(&mut self, x: Var, axis: SoftmaxAxis) -> Result<Var> {
        let out = ops::softmax_axis(self.value(x), axis)?;
        Ok(self.push(out, Op::Softmax { x, axis }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x))
    }

    /// Elementwise absolute value; subgradient at zero is zero.
    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.push(out, Op::Abs(x))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!(
                "elementwise op on {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn pool(&mut self, x: Var, axes: &[SpatialAxis], mode: PoolMode) -> Result<Var> {
        let pooled = ops::pool_axis_indexed(self.value(x), axes, mode)?;
        Ok(self.push(
            pooled.value,
            Op::Pool {
                x,
                axes: axes.to_vec(),
                mode,
                argmax: pooled.argmax,
            },
        ))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let out = ops::conv2d_forward(self.value(x), self.value(w), self.value(b), dilation)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, dilation }))
    }

    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, cache) =
            ops::instance_norm_cached(self.value(x), self.value(gamma), self.value(beta))?;
        Ok(self.push(
            out,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                cache,
            },
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::argument("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::argument(format!("concat axis {axis} out of range")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(format!("concat of {:?} and {:?}", base, s)));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Rows `start..start + len` of the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let lead = v.shape()[0];
        if start + len > lead || len == 0 {
            return Err(Error::argument(format!(
                "slice {start}..{} of leading axis {lead}",
                start + len
            )));
        }
        let inner = v.len() / lead;
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        let out = Tensor::new(
            &shape,
            v.data()[start * inner..(start + len) * inner].to_vec(),
        )?;
        Ok(self.push(out, Op::Slice { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Repeats a `[D]` vector at every position of an `H×L×D` tensor.
    pub fn broadcast(&mut self, x: Var, h: usize, l: usize) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 1 {
            return Err(Error::shape(format!(
                "broadcast expects a vector, got {:?}",
                v.shape()
            )));
        }
        let d = v.len();
        let mut data = Vec::with_capacity(h * l * d);
        for _ in 0..h * l {
            data.extend_from_slice(v.data());
        }
        let out = Tensor::tensor3(h, l, d, data)?;
        Ok(self.push(out, Op::Broadcast(x)))
    }

    pub fn outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::outer_channel(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Outer(a, b)))
    }

    pub fn normalize_positions(&mut self, x: Var) -> Result<Var> {
        let out = ops::normalize_positions(self.value(x))?;
        Ok(self.push(out, Op::NormalizePositions(x)))
    }

    /// `-ln softmax(logits)[label]`, with the probability clamped at `1e-12`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let v = self.value(logits);
        if v.rank() != 1 {
            return Err(Error::shape("cross-entropy expects a logit vector"));
        }
        if label >= v.len() {
            return Err(Error::argument(format!(
                "label {label} out of range for {} classes",
                v.len()
            )));
        }
        let probs = ops::softmax_vec(v.data());
        let loss = -probs[label].max(lit(1e-12)).ln();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
        ))
    }

    /// `Σ x ⊙ weights`, a scalar. Used to reduce a tensor for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let v = self.value(x);
        if v.len() != weights.len() {
            return Err(Error::shape("weighted sum weight count mismatch"));
        }
        let s = ops::dot(v.data(), weights.data());
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::State(
                "backward called before any forward pass".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut contribs = self.vjp(node, &g)?;
            if self.fault == Some(node.op.kind()) {
                for (_, t) in &mut contribs {
                    t.scale_in_place(-T::one());
                }
            }
            for (v, t) in contribs {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t)?,
                    slot @ None => *slot = Some(t),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = ops::linear_rows_backward(val(*x), val(*w), g);
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::MatMul { a, b, ta, tb } => {
                let (ga, gb) = ops::matmul_backward(val(*a), val(*b), *ta, *tb, g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Softmax { x, axis } => {
                vec![(*x, ops::softmax_axis_backward(&node.value, g, *axis))]
            }
            Op::Relu(x) => vec![(*x, ops::relu_backward(val(*x), g))],
            Op::Sigmoid(x) => vec![(*x, ops::sigmoid_backward(&node.value, g))],
            Op::Abs(x) => {
                let data = val(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| {
                        if x > T::zero() {
                            g
                        } else if x < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![(*x, Tensor::new(g.shape(), data)?)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let ga = zip_map(g, val(*b), |g, y| g * y)?;
                let gb = zip_map(g, val(*a), |g, x| g * x)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, f) => vec![(*x, g.map(|v| v * *f))],
            Op::Pool {
                x,
                axes,
                mode,
                argmax,
            } => {
                vec![(
                    *x,
                    ops::pool_axis_backward(val(*x).shape(), axes, *mode, argmax, g),
                )]
            }
            Op::Conv2d { x, w, b, dilation } => {
                let (gx, gw, gb) = ops::conv2d_backward(val(*x), val(*w), *dilation, g);
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let (gx, gg, gb) = ops::instance_norm_backward(cache, val(*gamma), g);
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for &p in parts {
                    let ps = val(p).shape();
                    let chunk = ps[*axis] * inner;
                    let mut data = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        let start = o * total * inner + offset;
                        data.extend_from_slice(&g.data()[start..start + chunk]);
                    }
                    offset += chunk;
                    out.push((p, Tensor::new(ps, data)?));
                }
                out
            }
            Op::Slice { x, start } => {
                let src = val(*x);
                let inner = src.len() / src.shape()[0];
                let mut gx = Tensor::zeros(src.shape());
                gx.data_mut()[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                vec![(*x, gx)]
            }
            Op::Reshape(x) => vec![(*x, g.clone().reshape(val(*x).shape())?)],
            Op::Broadcast(x) => {
                let d = val(*x).len();
                let mut gx = vec![T::zero(); d];
                for row in g.data().chunks_exact(d) {
                    for (a, &b) in gx.iter_mut().zip(row) {
                        *a = *a + b;
                    }
                }
                vec![(*x, Tensor::vector(gx))]
            }
            Op::Outer(a, b) => {
                let (ga, gb) = ops::outer_channel_backward(val(*a), val(*b), g);
                vec![(*a, ga), (*b, gb)]
            }
            Op::NormalizePositions(x) => {
                vec![(
                    *x,
                    ops::normalize_positions_backward(val(*x), &node.value, g),
                )]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let scale = g.data()[0];
                let data = probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| scale * (p - if i == *label { T::one() } else { T::zero() }))
                    .collect();
                vec![(*logits, Tensor::vector(data))]
            }
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                vec![(*x, weights.map(|w| w * s).reshape(val(*x).shape())?)]
            }
        })
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data)
}
