//! The recording tape: forward evaluation of primitives and the reverse sweep.
//!
//! Every primitive appends one node whose inputs are strictly earlier nodes, so
//! the node vector is already in topological order and the backward pass is a
//! single reverse scan.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, mismatch, Result, TensorError};
use crate::kernels::{self, ConvGeom, Layout};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{split_axis, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifiers of the primitive operations the tape understands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    MatMul,
    Conv2d,
    Relu,
    Sigmoid,
    Softmax,
    LogSoftmax,
    Add,
    Sub,
    Mul,
    Scale,
    Shift,
    Mean,
    Variance,
    Concat,
    Flatten,
    Reshape,
    Transpose,
    Narrow,
    Embedding,
    L1Norm,
    Rsqrt,
    CrossEntropy,
    BceWithLogits,
    LstmCell,
}

impl Primitive {
    pub const ALL: [Primitive; 24] = [
        Primitive::MatMul,
        Primitive::Conv2d,
        Primitive::Relu,
        Primitive::Sigmoid,
        Primitive::Softmax,
        Primitive::LogSoftmax,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Scale,
        Primitive::Shift,
        Primitive::Mean,
        Primitive::Variance,
        Primitive::Concat,
        Primitive::Flatten,
        Primitive::Reshape,
        Primitive::Transpose,
        Primitive::Narrow,
        Primitive::Embedding,
        Primitive::L1Norm,
        Primitive::Rsqrt,
        Primitive::CrossEntropy,
        Primitive::BceWithLogits,
        Primitive::LstmCell,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Conv2d => "conv2d",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Softmax => "softmax",
            Primitive::LogSoftmax => "log-softmax",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale => "scale",
            Primitive::Shift => "shift",
            Primitive::Mean => "mean",
            Primitive::Variance => "variance",
            Primitive::Concat => "concat",
            Primitive::Flatten => "flatten",
            Primitive::Reshape => "reshape",
            Primitive::Transpose => "transpose",
            Primitive::Narrow => "narrow",
            Primitive::Embedding => "embedding",
            Primitive::L1Norm => "l1-norm",
            Primitive::Rsqrt => "rsqrt",
            Primitive::CrossEntropy => "cross-entropy",
            Primitive::BceWithLogits => "bce-with-logits",
            Primitive::LstmCell => "lstm-cell",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| TensorError::UnknownPrimitive(s.to_string()))
    }
}

/// Static attributes for [`Graph::apply`]; each primitive reads the fields it needs.
#[derive(Clone, Debug, Default)]
pub struct Attrs {
    pub axis: usize,
    pub stride: usize,
    pub padding: usize,
    pub scalar: f64,
    pub start: usize,
    pub len: usize,
    pub shape: Vec<usize>,
    pub indices: Vec<usize>,
    pub targets: Vec<f64>,
}

enum Op<F> {
    Leaf,
    Param(ParamId),
    MatMul { batched: bool },
    Conv2d { stride: usize, padding: usize, cols: Vec<F> },
    Relu,
    Sigmoid,
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    Add(Broadcast),
    Sub(Broadcast),
    Mul(Broadcast),
    Scale(F),
    Shift,
    Mean { axis: usize },
    Variance { axis: usize },
    Concat { axis: usize },
    Reshape,
    Transpose,
    Narrow { axis: usize, start: usize },
    Embedding { indices: Vec<usize> },
    L1Norm,
    Rsqrt,
    CrossEntropy { labels: Vec<usize>, probs: Vec<F> },
    BceWithLogits { targets: Vec<F> },
    LstmCell,
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log-softmax",
            Op::Add(_) => "add",
            Op::Sub(_) => "sub",
            Op::Mul(_) => "mul",
            Op::Scale(_) => "scale",
            Op::Shift => "shift",
            Op::Mean { .. } => "mean",
            Op::Variance { .. } => "variance",
            Op::Concat { .. } => "concat",
            Op::Reshape => "reshape",
            Op::Transpose => "transpose",
            Op::Narrow { .. } => "narrow",
            Op::Embedding { .. } => "embedding",
            Op::L1Norm => "l1-norm",
            Op::Rsqrt => "rsqrt",
            Op::CrossEntropy { .. } => "cross-entropy",
            Op::BceWithLogits { .. } => "bce-with-logits",
            Op::LstmCell => "lstm-cell",
        }
    }
}

/// Index maps for broadcast operands; `None` means the operand already has the output shape.
struct Broadcast {
    a: Option<Vec<u32>>,
    b: Option<Vec<u32>>,
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    inputs: Vec<usize>,
    requires_grad: bool,
}

/// A single-owner recording of one forward computation.
pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
    record: bool,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    /// Tape that keeps everything `backward` needs.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), record: true }
    }

    /// Tape for evaluation only: no saved intermediates, `backward` is rejected.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), record: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives a gradient (used for gradient checks on raw inputs).
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.leaf(t, Op::Leaf, false)
    }

    /// Copies a parameter's current value onto the tape.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        let p = store.get(id);
        self.leaf(p.value.clone(), Op::Param(id), p.trainable)
    }

    fn leaf(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, inputs: Vec::new(), requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op<F>, inputs: Vec<usize>, value: Tensor<F>) -> Result<Var> {
        let node = self.nodes.len();
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op.name(), node });
        }
        let requires_grad = self.record && inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node { value, op, inputs, requires_grad });
        Ok(Var(node))
    }

    fn val(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Generic entry point dispatching on a primitive id.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(invalid(prim.name(), format!("expected {n} inputs, got {}", inputs.len())))
            }
        };
        match prim {
            Primitive::Concat => {
                if inputs.is_empty() {
                    return Err(invalid("concat", "no inputs"));
                }
                self.concat(inputs, attrs.axis)
            }
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul => {
                arity(2)?;
                let (a, b) = (inputs[0], inputs[1]);
                match prim {
                    Primitive::MatMul => self.matmul(a, b),
                    Primitive::Add => self.add(a, b),
                    Primitive::Sub => self.sub(a, b),
                    _ => self.mul(a, b),
                }
            }
            Primitive::Conv2d => {
                arity(2)?;
                self.conv2d(inputs[0], inputs[1], attrs.stride, attrs.padding)
            }
            Primitive::Embedding => {
                arity(1)?;
                self.embedding(inputs[0], &attrs.indices)
            }
            Primitive::LstmCell => {
                arity(2)?;
                self.lstm_cell(inputs[0], inputs[1])
            }
            _ => {
                arity(1)?;
                let x = inputs[0];
                match prim {
                    Primitive::Relu => self.relu(x),
                    Primitive::Sigmoid => self.sigmoid(x),
                    Primitive::Softmax => self.softmax(x, attrs.axis),
                    Primitive::LogSoftmax => self.log_softmax(x, attrs.axis),
                    Primitive::Scale => self.scale(x, attrs.scalar),
                    Primitive::Shift => self.shift(x, attrs.scalar),
                    Primitive::Mean => self.mean(x, attrs.axis),
                    Primitive::Variance => self.variance(x, attrs.axis),
                    Primitive::Flatten => self.flatten(x),
                    Primitive::Reshape => self.reshape(x, &attrs.shape),
                    Primitive::Transpose => self.transpose(x),
                    Primitive::Narrow => self.narrow(x, attrs.axis, attrs.start, attrs.len),
                    Primitive::L1Norm => self.l1_norm(x),
                    Primitive::Rsqrt => self.rsqrt(x),
                    Primitive::CrossEntropy => self.cross_entropy(x, &attrs.indices),
                    Primitive::BceWithLogits => {
                        let t: Vec<F> = attrs.targets.iter().map(|&v| F::of(v)).collect();
                        self.bce_with_logits(x, &t)
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    // ----- linear algebra -------------------------------------------------

    /// `[.., m, k] × [k, n] -> [.., m, n]`, or batched `[B.., m, k] × [B.., k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.val(a).shape().to_vec(), self.val(b).shape().to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch("matmul", "rank >= 2 operands", &[&sa, &sb]));
        }
        let k = sa[sa.len() - 1];
        if sb.len() == 2 {
            if sb[0] != k {
                return Err(mismatch("matmul", format!("rhs with {k} rows"), &[&sa, &sb]));
            }
            let n = sb[1];
            let m = self.val(a).numel() / k;
            let mut out = vec![F::zero(); m * n];
            kernels::gemm(
                m,
                k,
                n,
                self.val(a).data(),
                Layout::rm(k),
                self.val(b).data(),
                Layout::rm(n),
                &mut out,
                false,
            );
            let mut shape = sa.clone();
            *shape.last_mut().unwrap() = n;
            return self.push(Op::MatMul { batched: false }, vec![a.0, b.0], Tensor::from_parts(shape, out));
        }
        let r = sa.len();
        if sb.len() != r || sa[..r - 2] != sb[..r - 2] || sb[r - 2] != k {
            return Err(mismatch("matmul", "matching batch dims and inner extent", &[&sa, &sb]));
        }
        let (m, n) = (sa[r - 2], sb[r - 1]);
        let batch: usize = sa[..r - 2].iter().product();
        let mut out = vec![F::zero(); batch * m * n];
        let (da, db) = (self.val(a).data(), self.val(b).data());
        for i in 0..batch {
            kernels::ordered_matmul(
                m,
                k,
                n,
                &da[i * m * k..],
                Layout::rm(k),
                &db[i * k * n..],
                Layout::rm(n),
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let mut shape = sa.clone();
        shape[r - 1] = n;
        self.push(Op::MatMul { batched: true }, vec![a.0, b.0], Tensor::from_parts(shape, out))
    }

    /// Cross-correlation of `[N, C, H, W]` with square kernels `[O, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.val(x).shape().to_vec(), self.val(w).shape().to_vec());
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] {
            return Err(mismatch("conv2d", "input [N,C,H,W] and kernels [O,C,k,k]", &[&sx, &sw]));
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be positive"));
        }
        let geom = conv_geom(&sx, &sw, stride, padding)
            .ok_or_else(|| mismatch("conv2d", "kernel no larger than padded input", &[&sx, &sw]))?;
        let (n, o) = (sx[0], sw[0]);
        let (rows, p) = (geom.col_rows(), geom.col_cols());
        let img = geom.channels * geom.height * geom.width;
        let keep = self.record && self.nodes[w.0].requires_grad;
        let mut cols = vec![F::zero(); if keep { n * rows * p } else { rows * p }];
        let mut out = vec![F::zero(); n * o * p];
        let (dx, dw) = (self.val(x).data(), self.val(w).data());
        for i in 0..n {
            let buf = if keep { &mut cols[i * rows * p..(i + 1) * rows * p] } else { &mut cols[..] };
            kernels::im2col(&dx[i * img..(i + 1) * img], &geom, buf);
            kernels::gemm(o, rows, p, dw, Layout::rm(rows), buf, Layout::rm(p), &mut out[i * o * p..(i + 1) * o * p], false);
        }
        if !keep {
            cols = Vec::new();
        }
        let shape = vec![n, o, geom.out_h, geom.out_w];
        self.push(Op::Conv2d { stride, padding, cols }, vec![x.0, w.0], Tensor::from_parts(shape, out))
    }

    // ----- elementwise ----------------------------------------------------

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        let out = t.data().iter().map(|&v| if v > F::zero() { v } else { F::zero() }).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Relu, vec![x.0], Tensor::from_parts(shape, out))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        let out = t.data().iter().map(|&v| sigmoid(v)).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Sigmoid, vec![x.0], Tensor::from_parts(shape, out))
    }

    pub fn rsqrt(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        if let Some(bad) = t.data().iter().find(|v| **v <= F::zero()) {
            return Err(invalid("rsqrt", format!("input must be positive, found {bad}")));
        }
        let out = t.data().iter().map(|&v| v.sqrt().recip()).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Rsqrt, vec![x.0], Tensor::from_parts(shape, out))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = F::of(s);
        let t = self.val(x);
        let out = t.data().iter().map(|&v| v * s).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Scale(s), vec![x.0], Tensor::from_parts(shape, out))
    }

    pub fn shift(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = F::of(s);
        let t = self.val(x);
        let out = t.data().iter().map(|&v| v + s).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Shift, vec![x.0], Tensor::from_parts(shape, out))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Vec<usize>, Broadcast)> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        let out = kernels::broadcast_shape(sa, sb)
            .ok_or_else(|| mismatch(op, "broadcast-compatible shapes", &[sa, sb]))?;
        let map = |s: &[usize]| (s != out.as_slice()).then(|| kernels::broadcast_index(&out, s));
        Ok((out.clone(), Broadcast { a: map(sa), b: map(sb) }))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<(Vec<usize>, Broadcast, Vec<F>)> {
        let (shape, bc) = self.broadcast(op, a, b)?;
        let (da, db) = (self.val(a).data(), self.val(b).data());
        let out = match (&bc.a, &bc.b) {
            (None, None) => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            (None, Some(ib)) => da.iter().zip(ib).map(|(&x, &j)| f(x, db[j as usize])).collect(),
            (Some(ia), None) => ia.iter().zip(db).map(|(&i, &y)| f(da[i as usize], y)).collect(),
            (Some(ia), Some(ib)) => ia.iter().zip(ib).map(|(&i, &j)| f(da[i as usize], db[j as usize])).collect(),
        };
        Ok((shape, bc, out))
    }

    /// Broadcasting elementwise sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, bc, out) = self.binary("add", a, b, |x, y| x + y)?;
        self.push(Op::Add(bc), vec![a.0, b.0], Tensor::from_parts(shape, out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, bc, out) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push(Op::Sub(bc), vec![a.0, b.0], Tensor::from_parts(shape, out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, bc, out) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul(bc), vec![a.0, b.0], Tensor::from_parts(shape, out))
    }

    // ----- reductions along an axis (the axis is kept with extent 1) ------

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(usize, usize, usize)> {
        let s = self.val(x).shape();
        if axis >= s.len() {
            return Err(mismatch(op, format!("rank > {axis}"), &[s]));
        }
        Ok(split_axis(s, axis))
    }

    fn keepdim(&self, x: Var, axis: usize) -> Vec<usize> {
        let mut s = self.val(x).shape().to_vec();
        s[axis] = 1;
        s
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = self.check_axis("softmax", x, axis)?;
        let mut out = self.val(x).data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mx = (0..n).map(|j| out[idx(j)]).fold(F::neg_infinity(), F::max);
                let mut sum = F::zero();
                for j in 0..n {
                    let e = (out[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[idx(j)] /= sum;
                }
            }
        }
        let shape = self.val(x).shape().to_vec();
        self.push(Op::Softmax { axis }, vec![x.0], Tensor::from_parts(shape, out))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = self.check_axis("log-softmax", x, axis)?;
        let mut out = self.val(x).data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mx = (0..n).map(|j| out[idx(j)]).fold(F::neg_infinity(), F::max);
                let lse = mx + (0..n).map(|j| (out[idx(j)] - mx).exp()).sum::<F>().ln();
                for j in 0..n {
                    out[idx(j)] = out[idx(j)] - lse;
                }
            }
        }
        let shape = self.val(x).shape().to_vec();
        self.push(Op::LogSoftmax { axis }, vec![x.0], Tensor::from_parts(shape, out))
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = self.check_axis("mean", x, axis)?;
        let d = self.val(x).data();
        let inv = F::one() / F::of(n as f64);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * n + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let shape = self.keepdim(x, axis);
        self.push(Op::Mean { axis }, vec![x.0], Tensor::from_parts(shape, out))
    }

    /// Population variance (divides by the axis extent).
    pub fn variance(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = self.check_axis("variance", x, axis)?;
        let d = self.val(x).data();
        let nf = F::of(n as f64);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mu = (0..n).map(|j| d[(o * n + j) * inner + i]).sum::<F>() / nf;
                out[o * inner + i] = (0..n)
                    .map(|j| {
                        let c = d[(o * n + j) * inner + i] - mu;
                        c * c
                    })
                    .sum::<F>()
                    / nf;
            }
        }
        let shape = self.keepdim(x, axis);
        self.push(Op::Variance { axis }, vec![x.0], Tensor::from_parts(shape, out))
    }

    // ----- shape manipulation ---------------------------------------------

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.val(xs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(mismatch("concat", format!("rank > {axis}"), &[&first]));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.val(v).shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", format!("shapes like {first:?} off axis {axis}"), &[s]));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.val(v);
                let len = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(Op::Concat { axis }, xs.iter().map(|v| v.0).collect(), Tensor::from_parts(shape, out))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.val(x).clone().reshape(shape.to_vec())?;
        self.push(Op::Reshape, vec![x.0], t)
    }

    /// `[d0, d1, ...] -> [d0, d1·...]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x).shape();
        let d0 = s[0];
        let rest = self.val(x).numel() / d0;
        self.reshape(x, &[d0, rest])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x).shape().to_vec();
        if s.len() < 2 {
            return Err(mismatch("transpose", "rank >= 2", &[&s]));
        }
        let r = s.len();
        let (m, n) = (s[r - 2], s[r - 1]);
        let out = transpose_last(self.val(x).data(), m, n);
        let mut shape = s;
        shape.swap(r - 2, r - 1);
        self.push(Op::Transpose, vec![x.0], Tensor::from_parts(shape, out))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.val(x).shape().to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(mismatch("narrow", format!("axis {axis} covering [{start}, {})", start + len), &[&s]));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let d = self.val(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push(Op::Narrow { axis, start }, vec![x.0], Tensor::from_parts(shape, out))
    }

    /// Rows of a `[V, D]` table selected by `indices`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.val(table).shape().to_vec();
        if s.len() != 2 {
            return Err(mismatch("embedding", "table [V, D]", &[&s]));
        }
        if indices.is_empty() {
            return Err(invalid("embedding", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(invalid("embedding", format!("index {bad} out of range for {} rows", s[0])));
        }
        let d = self.val(table).data();
        let out = indices.iter().flat_map(|&i| d[i * s[1]..(i + 1) * s[1]].iter().copied()).collect();
        self.push(
            Op::Embedding { indices: indices.to_vec() },
            vec![table.0],
            Tensor::from_parts(vec![indices.len(), s[1]], out),
        )
    }

    // ----- losses and fused cells -----------------------------------------

    /// Sum of absolute values, as a one-element tensor.
    pub fn l1_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x).data().iter().map(|v| v.abs()).sum::<F>();
        self.push(Op::L1Norm, vec![x.0], Tensor::scalar(s))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`; logits are `[B, K]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.val(logits).shape().to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(mismatch("cross-entropy", format!("logits [{}, K]", labels.len()), &[&s]));
        }
        let (b, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(invalid("cross-entropy", format!("label {bad} out of range for {k} classes")));
        }
        let d = self.val(logits).data();
        let mut probs = vec![F::zero(); b * k];
        let mut loss = F::zero();
        for r in 0..b {
            let row = &d[r * k..(r + 1) * k];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let sum: F = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + sum.ln();
            loss += lse - row[labels[r]];
            for c in 0..k {
                probs[r * k + c] = (row[c] - lse).exp();
            }
        }
        loss /= F::of(b as f64);
        let probs = if self.record { probs } else { Vec::new() };
        self.push(
            Op::CrossEntropy { labels: labels.to_vec(), probs },
            vec![logits.0],
            Tensor::scalar(loss),
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against targets in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[F]) -> Result<Var> {
        let t = self.val(logits);
        if t.numel() != targets.len() {
            return Err(mismatch("bce-with-logits", format!("{} logits", targets.len()), &[t.shape()]));
        }
        let n = F::of(targets.len() as f64);
        let loss = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(F::zero()) - x * y + (-x.abs()).exp().ln_1p())
            .sum::<F>()
            / n;
        self.push(Op::BceWithLogits { targets: targets.to_vec() }, vec![logits.0], Tensor::scalar(loss))
    }

    /// One LSTM step from pre-activation gates `[B, 4H]` (order i, f, g, o) and
    /// cell state `[B, H]`; returns `[B, 2H]` holding `(h', c')`.
    pub fn lstm_cell(&mut self, gates: Var, cell: Var) -> Result<Var> {
        let (sg, sc) = (self.val(gates).shape().to_vec(), self.val(cell).shape().to_vec());
        if sg.len() != 2 || sc.len() != 2 || sg[0] != sc[0] || sg[1] != 4 * sc[1] {
            return Err(mismatch("lstm-cell", "gates [B, 4H] and cell [B, H]", &[&sg, &sc]));
        }
        let (b, h) = (sc[0], sc[1]);
        let (g, c) = (self.val(gates).data(), self.val(cell).data());
        let mut out = vec![F::zero(); b * 2 * h];
        for r in 0..b {
            let gr = &g[r * 4 * h..(r + 1) * 4 * h];
            for j in 0..h {
                let (i, f, gg, o) = lstm_gates(gr, h, j);
                let c_new = f * c[r * h + j] + i * gg;
                out[r * 2 * h + j] = o * c_new.tanh();
                out[r * 2 * h + h + j] = c_new;
            }
        }
        self.push(Op::LstmCell, vec![gates.0, cell.0], Tensor::from_parts(vec![b, 2 * h], out))
    }

    // ----- reverse sweep ----------------------------------------------------

    /// Reverse-mode gradients of a scalar `loss` with respect to every node that
    /// requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        if !self.record {
            return Err(TensorError::InferenceTape);
        }
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[id] = Some(g);
                continue;
            }
            self.backprop_node(id, &g, &mut grads)?;
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(loss.0 + 1)
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) if n.requires_grad => Some((p, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, id: usize, g: &[F], grads: &mut [Option<Vec<F>>]) -> Result<()> {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        let want = |k: usize| self.nodes[ins[k]].requires_grad;
        let inval = |k: usize| &self.nodes[ins[k]].value;
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { batched } => {
                let (a, b) = (inval(0), inval(1));
                let (sa, sb) = (a.shape(), b.shape());
                let k = sa[sa.len() - 1];
                if !batched {
                    let n = sb[1];
                    let m = a.numel() / k;
                    if want(0) {
                        let mut ga = vec![F::zero(); m * k];
                        kernels::gemm(m, n, k, g, Layout::rm(n), b.data(), Layout::tr(n), &mut ga, false);
                        accumulate(grads, ins[0], ga);
                    }
                    if want(1) {
                        let mut gb = vec![F::zero(); k * n];
                        kernels::gemm(k, m, n, a.data(), Layout::tr(k), g, Layout::rm(n), &mut gb, false);
                        accumulate(grads, ins[1], gb);
                    }
                } else {
                    let r = sa.len();
                    let (m, n) = (sa[r - 2], sb[r - 1]);
                    let batch = a.numel() / (m * k);
                    if want(0) {
                        let mut ga = vec![F::zero(); a.numel()];
                        for i in 0..batch {
                            kernels::ordered_matmul(m, n, k, &g[i * m * n..], Layout::rm(n), &b.data()[i * k * n..], Layout::tr(n), &mut ga[i * m * k..(i + 1) * m * k], false);
                        }
                        accumulate(grads, ins[0], ga);
                    }
                    if want(1) {
                        let mut gb = vec![F::zero(); b.numel()];
                        for i in 0..batch {
                            kernels::ordered_matmul(k, m, n, &a.data()[i * m * k..], Layout::tr(k), &g[i * m * n..], Layout::rm(n), &mut gb[i * k * n..(i + 1) * k * n], false);
                        }
                        accumulate(grads, ins[1], gb);
                    }
                }
            }
            Op::Conv2d { stride, padding, cols } => {
                let (x, w) = (inval(0), inval(1));
                let geom = conv_geom(x.shape(), w.shape(), *stride, *padding).expect("validated in forward");
                let (n, o) = (x.shape()[0], w.shape()[0]);
                let (rows, p) = (geom.col_rows(), geom.col_cols());
                if want(1) {
                    let mut gw = vec![F::zero(); w.numel()];
                    for i in 0..n {
                        kernels::gemm(o, p, rows, &g[i * o * p..], Layout::rm(p), &cols[i * rows * p..], Layout::tr(p), &mut gw, true);
                    }
                    accumulate(grads, ins[1], gw);
                }
                if want(0) {
                    let img = geom.channels * geom.height * geom.width;
                    let mut gx = vec![F::zero(); x.numel()];
                    let mut dcols = vec![F::zero(); rows * p];
                    for i in 0..n {
                        kernels::gemm(rows, o, p, w.data(), Layout::tr(rows), &g[i * o * p..], Layout::rm(p), &mut dcols, false);
                        kernels::col2im(&dcols, &geom, &mut gx[i * img..(i + 1) * img]);
                    }
                    accumulate(grads, ins[0], gx);
                }
            }
            Op::Relu => {
                let x = inval(0).data();
                let gx = g.iter().zip(x).map(|(&gi, &xi)| if xi > F::zero() { gi } else { F::zero() }).collect();
                accumulate(grads, ins[0], gx);
            }
            Op::Sigmoid => {
                let gx = g.iter().zip(y).map(|(&gi, &yi)| gi * yi * (F::one() - yi)).collect();
                accumulate(grads, ins[0], gx);
            }
            Op::Rsqrt => {
                let half = F::of(0.5);
                let gx = g.iter().zip(y).map(|(&gi, &yi)| -half * gi * yi * yi * yi).collect();
                accumulate(grads, ins[0], gx);
            }
            Op::Softmax { axis } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let mut gx = vec![F::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: F = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                accumulate(grads, ins[0], gx);
            }
            Op::LogSoftmax { axis } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let mut gx = vec![F::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let total: F = (0..n).map(|j| g[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = g[idx(j)] - y[idx(j)].exp() * total;
                        }
                    }
                }
                accumulate(grads, ins[0], gx);
            }
            Op::Add(bc) | Op::Sub(bc) => {
                let neg = matches!(node.op, Op::Sub(_));
                if want(0) {
                    accumulate(grads, ins[0], reduce_broadcast(g, bc.a.as_deref(), inval(0).numel(), |gi, _| gi));
                }
                if want(1) {
                    let gb = reduce_broadcast(g, bc.b.as_deref(), inval(1).numel(), |gi, _| if neg { -gi } else { gi });
                    accumulate(grads, ins[1], gb);
                }
            }
            Op::Mul(bc) => {
                let (a, b) = (inval(0).data(), inval(1).data());
                let pick = |map: Option<&[u32]>, i: usize| map.map_or(i, |m| m[i] as usize);
                if want(0) {
                    let other = |i: usize| b[pick(bc.b.as_deref(), i)];
                    accumulate(grads, ins[0], reduce_broadcast(g, bc.a.as_deref(), a.len(), |gi, i| gi * other(i)));
                }
                if want(1) {
                    let other = |i: usize| a[pick(bc.a.as_deref(), i)];
                    accumulate(grads, ins[1], reduce_broadcast(g, bc.b.as_deref(), b.len(), |gi, i| gi * other(i)));
                }
            }
            Op::Scale(s) => accumulate(grads, ins[0], g.iter().map(|&v| v * *s).collect()),
            Op::Shift | Op::Reshape => accumulate(grads, ins[0], g.to_vec()),
            Op::Mean { axis } => {
                let (outer, n, inner) = split_axis(inval(0).shape(), *axis);
                let inv = F::one() / F::of(n as f64);
                let mut gx = vec![F::zero(); outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            gx[(o * n + j) * inner + i] = g[o * inner + i] * inv;
                        }
                    }
                }
                accumulate(grads, ins[0], gx);
            }
            Op::Variance { axis } => {
                let x = inval(0).data();
                let (outer, n, inner) = split_axis(inval(0).shape(), *axis);
                let nf = F::of(n as f64);
                let two = F::of(2.0);
                let mut gx = vec![F::zero(); x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let mu = (0..n).map(|j| x[(o * n + j) * inner + i]).sum::<F>() / nf;
                        for j in 0..n {
                            let k = (o * n + j) * inner + i;
                            gx[k] = g[o * inner + i] * two * (x[k] - mu) / nf;
                        }
                    }
                }
                accumulate(grads, ins[0], gx);
            }
            Op::Concat { axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for (k, &inp) in ins.iter().enumerate() {
                    let len = inval(k).shape()[*axis];
                    if want(k) {
                        let mut gx = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            gx.extend_from_slice(&g[(o * total + offset) * inner..(o * total + offset + len) * inner]);
                        }
                        accumulate(grads, inp, gx);
                    }
                    offset += len;
                }
            }
            Op::Transpose => {
                let s = node.value.shape();
                let r = s.len();
                accumulate(grads, ins[0], transpose_last(g, s[r - 2], s[r - 1]));
            }
            Op::Narrow { axis, start } => {
                let (outer, n, inner) = split_axis(inval(0).shape(), *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![F::zero(); outer * n * inner];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                accumulate(grads, ins[0], gx);
            }
            Op::Embedding { indices } => {
                let d = inval(0).shape()[1];
                let mut gt = vec![F::zero(); inval(0).numel()];
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..d {
                        gt[i * d + c] += g[r * d + c];
                    }
                }
                accumulate(grads, ins[0], gt);
            }
            Op::L1Norm => {
                let gx = inval(0).data().iter().map(|&v| g[0] * sign(v)).collect();
                accumulate(grads, ins[0], gx);
            }
            Op::CrossEntropy { labels, probs } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = g[0] / F::of(b as f64);
                let mut gx: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gx[r * k + l] -= scale;
                }
                accumulate(grads, ins[0], gx);
            }
            Op::BceWithLogits { targets } => {
                let scale = g[0] / F::of(targets.len() as f64);
                let gx = inval(0).data().iter().zip(targets).map(|(&x, &t)| (sigmoid(x) - t) * scale).collect();
                accumulate(grads, ins[0], gx);
            }
            Op::LstmCell => {
                let (gates, cell) = (inval(0).data(), inval(1).data());
                let h = inval(1).shape()[1];
                let b = inval(1).shape()[0];
                let one = F::one();
                let mut gg_out = vec![F::zero(); gates.len()];
                let mut gc_out = vec![F::zero(); cell.len()];
                for r in 0..b {
                    let gr = &gates[r * 4 * h..(r + 1) * 4 * h];
                    for j in 0..h {
                        let (i, f, gg, o) = lstm_gates(gr, h, j);
                        let c_new = y[r * 2 * h + h + j];
                        let tc = c_new.tanh();
                        let dh = g[r * 2 * h + j];
                        let dc = g[r * 2 * h + h + j] + dh * o * (one - tc * tc);
                        let base = r * 4 * h;
                        gg_out[base + j] = dc * gg * i * (one - i);
                        gg_out[base + h + j] = dc * cell[r * h + j] * f * (one - f);
                        gg_out[base + 2 * h + j] = dc * i * (one - gg * gg);
                        gg_out[base + 3 * h + j] = dh * tc * o * (one - o);
                        gc_out[r * h + j] = dc * f;
                    }
                }
                if want(0) {
                    accumulate(grads, ins[0], gg_out);
                }
                if want(1) {
                    accumulate(grads, ins[1], gc_out);
                }
            }
        }
        Ok(())
    }

    /// Fingerprint of which side of every non-differentiable point (relu and
    /// |·| kinks) the recorded inputs sit on. Gradient checks compare this
    /// across perturbed evaluations to skip coordinates that straddle a kink.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for node in &self.nodes {
            if matches!(node.op, Op::Relu | Op::L1Norm) {
                for &v in self.nodes[node.inputs[0]].value.data() {
                    let bit = if v > F::zero() { 1 } else if v < F::zero() { 2 } else { 3 };
                    h ^= bit;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Result of a reverse sweep.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    params: Vec<(ParamId, usize)>,
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to a leaf created by [`Graph::input`] or [`Graph::param`].
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the store (unreachable parameters get nothing).
    pub fn accumulate_into(&self, store: &mut ParamStore<F>) {
        for &(pid, node) in &self.params {
            if let Some(g) = self.grads[node].as_deref() {
                let p = store.get_mut(pid);
                if p.trainable {
                    for (dst, &src) in p.grad.iter_mut().zip(g) {
                        *dst += src;
                    }
                }
            }
        }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Vec<F>>], idx: usize, g: Vec<F>) {
    match &mut grads[idx] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn reduce_broadcast<F: Real>(g: &[F], map: Option<&[u32]>, n: usize, f: impl Fn(F, usize) -> F) -> Vec<F> {
    match map {
        None => g.iter().enumerate().map(|(i, &gi)| f(gi, i)).collect(),
        Some(m) => {
            let mut out = vec![F::zero(); n];
            for (i, (&gi, &j)) in g.iter().zip(m).enumerate() {
                out[j as usize] += f(gi, i);
            }
            out
        }
    }
}

fn conv_geom(sx: &[usize], sw: &[usize], stride: usize, padding: usize) -> Option<ConvGeom> {
    let (h, w, k) = (sx[2], sx[3], sw[2]);
    if h + 2 * padding < k || w + 2 * padding < k {
        return None;
    }
    Some(ConvGeom {
        channels: sx[1],
        height: h,
        width: w,
        kernel: k,
        stride,
        padding,
        out_h: (h + 2 * padding - k) / stride + 1,
        out_w: (w + 2 * padding - k) / stride + 1,
    })
}

fn transpose_last<F: Real>(d: &[F], m: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); d.len()];
    for (src, dst) in d.chunks(m * n).zip(out.chunks_mut(m * n)) {
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    out
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
fn sign<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

#[inline]
fn lstm_gates<F: Real>(gr: &[F], h: usize, j: usize) -> (F, F, F, F) {
    (sigmoid(gr[j]), sigmoid(gr[h + j]), gr[2 * h + j].tanh(), sigmoid(gr[3 * h + j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn conv_shape_rule() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 3, 32, 32]));
        let w = g.constant(Tensor::zeros([32, 3, 4, 4]));
        let y = g.conv2d(x, w, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 32, 16, 16]);
    }

    #[test]
    fn matmul_by_identity_is_exact() {
        let mut g = Graph::<f32>::new();
        let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let av = g.constant(Tensor::from_f64([3, 4], &a).unwrap());
        let id = g.constant(Tensor::eye(4));
        let out = g.matmul(av, id).unwrap();
        assert_eq!(g.value(out), g.value(av));
    }

    #[test]
    fn relu_gradient_is_indicator() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[2], &[1.0, -1.0]));
        let r = g.relu(x).unwrap();
        let s = g.l1_norm(r).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[3], &[0.0, 2.0, -0.5]));
        let r = g.relu(x).unwrap();
        let w = g.constant(t(&[3], &[1.0, 1.0, 1.0]));
        let p = g.mul(r, w).unwrap();
        let m = g.mean(p, 0).unwrap();
        let grads = g.backward(m).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(grads.wrt(x).unwrap(), &[0.0, third, 0.0]);
    }

    #[test]
    fn cross_entropy_gradient_closed_form() {
        let logits = [0.3, -1.2, 2.0];
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 3], &logits));
        let l = g.cross_entropy(x, &[1]).unwrap();
        let grads = g.backward(l).unwrap();
        let z: f64 = logits.iter().map(|v: &f64| v.exp()).sum();
        for (c, gv) in grads.wrt(x).unwrap().iter().enumerate() {
            let expect = logits[c].exp() / z - if c == 1 { 1.0 } else { 0.0 };
            assert!((gv - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_logits_give_log_k_loss() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros([4, 6]));
        let l = g.cross_entropy(x, &[0, 1, 2, 5]).unwrap();
        assert!((g.value(l).item() - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_bad_requests() {
        let g = Graph::<f64>::new();
        assert_eq!(g.backward(Var(0)).err(), Some(TensorError::EmptyTape));
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros([2]));
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
        let mut g = Graph::<f64>::inference();
        let x = g.input(Tensor::zeros([1]));
        assert_eq!(g.backward(x).err(), Some(TensorError::InferenceTape));
    }

    #[test]
    fn shape_errors_report_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([4, 5]));
        match g.matmul(a, b) {
            Err(TensorError::ShapeMismatch { actual, .. }) => assert_eq!(actual, vec![vec![2, 3], vec![4, 5]]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_primitive_is_rejected() {
        assert!(matches!("conv3d".parse::<Primitive>(), Err(TensorError::UnknownPrimitive(_))));
        for p in Primitive::ALL {
            assert_eq!(p.name().parse::<Primitive>().unwrap(), p);
        }
    }

    #[test]
    fn unreachable_params_get_zero() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let used = store.add("used", &[2], crate::Init::Ones, &mut rng);
        let unused = store.add("unused", &[2], crate::Init::Ones, &mut rng);
        let mut g = Graph::new();
        let u = g.param(&store, used);
        let _ = g.param(&store, unused);
        let l = g.l1_norm(u).unwrap();
        g.backward(l).unwrap().accumulate_into(&mut store);
        assert_eq!(store.get(used).grad, vec![1.0, 1.0]);
        assert_eq!(store.get(unused).grad, vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_values_abort() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1], &[1e300]));
        let y = g.mul(x, x);
        assert!(matches!(y, Err(TensorError::NonFinite { op: "mul", .. })));
    }
}
