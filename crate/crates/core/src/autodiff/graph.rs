use std::borrow::Cow;

use super::kernels::{axis_split, broadcast_shape, broadcast_strides, gemm, visit2, MatmulPrecision};
use super::{AutodiffError, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Relu,
    Sigmoid,
    Square,
    Sqrt,
    Scale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Reduce {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var>, relu: bool },
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Concat { a: Var, b: Var, axis: usize },
    Narrow { input: Var, axis: usize, start: usize },
    Expand(Var),
    Reshape(Var),
    Softmax { input: Var, axis: usize },
    MaxReduce { input: Var, axis: usize, argmax: Vec<usize> },
    Reduce { kind: Reduce, input: Var, axis: usize },
    SumAll(Var),
    Cross(Var, Var),
    Normalize { input: Var, norms: Vec<f64> },
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation graph. Parameters are borrowed for `'p`.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    precision: MatmulPrecision,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of `shape` when no gradient reached it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose matrix products use `precision`.
    pub fn with_precision(precision: MatmulPrecision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn precision(&self) -> MatmulPrecision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A borrowed trainable leaf.
    pub fn param(&mut self, value: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    // ---- forward operators -------------------------------------------------

    /// `a[..., k] x b[k, n] -> [..., n]`; the leading axes of `a` are
    /// flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).numel() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(self.precision, m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `x w + b` over the last axis of `x`, optionally followed by ReLU, as
    /// a single node. `b` holds either one entry per output column, shared
    /// by all rows, or `G` such rows, one per contiguous group of `m / G`
    /// rows of `x` (a `(B, 1, n)` bias for a `(B, N, k)` input).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>, relu: bool) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "linear",
                lhs: sx,
                rhs: sw,
            });
        }
        let (k, n) = (sw[0], sw[1]);
        let m = self.value(x).numel() / k.max(1);
        let mut out = match b {
            Some(b) => {
                let bias = self.value(b);
                let groups = bias.numel() / n.max(1);
                if n == 0 || bias.numel() % n != 0 || groups == 0 || m % groups != 0 {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "linear bias",
                        lhs: vec![m, n],
                        rhs: bias.shape().to_vec(),
                    });
                }
                let rows = m / groups;
                let mut out = Vec::with_capacity(m * n);
                for row in bias.data().chunks_exact(n) {
                    for _ in 0..rows {
                        out.extend_from_slice(row);
                    }
                }
                out
            }
            None => vec![0.0; m * n],
        };
        gemm(self.precision, m, k, n, self.value(x).data(), false, self.value(w).data(), false, 1.0, &mut out);
        if relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b, relu }, &inputs))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let out_shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let sa = broadcast_strides(self.shape(a), &out_shape);
        let sb = broadcast_strides(self.shape(b), &out_shape);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; out_shape.iter().product()];
        match kind {
            Binary::Add => visit2(&out_shape, &sa, &sb, |o, i, j| out[o] = da[i] + db[j]),
            Binary::Sub => visit2(&out_shape, &sa, &sb, |o, i, j| out[o] = da[i] - db[j]),
            Binary::Mul => visit2(&out_shape, &sa, &sb, |o, i, j| out[o] = da[i] * db[j]),
            Binary::Div => visit2(&out_shape, &sa, &sb, |o, i, j| out[o] = da[i] / db[j]),
        }
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Binary(kind, a, b), &[a, b]))
    }

    /// Broadcasting element-wise sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    /// Broadcasting element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let x = self.value(a);
        let f: fn(f64) -> f64 = match kind {
            Unary::Relu => |v| if v > 0.0 { v } else { 0.0 },
            Unary::Sigmoid => sigmoid,
            Unary::Square => |v| v * v,
            Unary::Sqrt => f64::sqrt,
            Unary::Scale(_) => |v| v,
        };
        let data: Vec<f64> = match kind {
            Unary::Scale(s) => x.data().iter().map(|v| v * s).collect(),
            _ => x.data().iter().map(|&v| f(v)).collect(),
        };
        let t = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Unary(kind, a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    /// Element-wise square root. The derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(Unary::Scale(factor), a)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa.iter().zip(&sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                lhs: sa,
                rhs: sb,
            });
        }
        let (outer, la, inner) = axis_split(&sa, axis)?;
        let lb = sb[axis];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.len() + db.len());
        for o in 0..outer {
            out.extend_from_slice(&da[o * la * inner..(o + 1) * la * inner]);
            out.extend_from_slice(&db[o * lb * inner..(o + 1) * lb * inner]);
        }
        let mut shape = sa;
        shape[axis] = la + lb;
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { a, b, axis }, &[a, b]))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (outer, full, inner) = axis_split(&shape, axis)?;
        if start + len > full {
            return Err(AutodiffError::InvalidArgument(format!(
                "narrow {start}..{} exceeds axis {axis} of size {full}",
                start + len
            )));
        }
        let d = self.value(input).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Narrow { input, axis, start }, &[input]))
    }

    /// Broadcast `input` to `shape` (repetition along size-1 axes).
    pub fn expand(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(input).to_vec();
        let out_shape = broadcast_shape("expand", &src, shape)?;
        if out_shape != shape {
            return Err(AutodiffError::ShapeMismatch {
                op: "expand",
                lhs: src,
                rhs: shape.to_vec(),
            });
        }
        let s = broadcast_strides(&src, shape);
        let d = self.value(input).data();
        let mut out = vec![0.0; shape.iter().product()];
        visit2(shape, &s, &s, |o, i, _| out[o] = d[i]);
        Ok(self.push(Tensor::new(shape.to_vec(), out)?, Op::Expand(input), &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(input), &[input]))
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        let x = self.value(input).data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { input, axis }, &[input]))
    }

    /// Maximum along `axis` (kept with size 1). Ties resolve to the lowest
    /// index, which alone receives the gradient.
    pub fn max_reduce(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        if len == 0 {
            return Err(AutodiffError::InvalidArgument("max over an empty axis".into()));
        }
        let x = self.value(input).data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            let base = o * len * inner;
            let row = &mut out[o * inner..(o + 1) * inner];
            let arg = &mut argmax[o * inner..(o + 1) * inner];
            row.copy_from_slice(&x[base..base + inner]);
            for j in 1..len {
                let src = &x[base + j * inner..base + (j + 1) * inner];
                for i in 0..inner {
                    if src[i] > row[i] {
                        row[i] = src[i];
                        arg[i] = j;
                    }
                }
            }
        }
        let mut new_shape = shape;
        new_shape[axis] = 1;
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::MaxReduce { input, axis, argmax },
            &[input],
        ))
    }

    /// Index along the reduced axis chosen by a [`Graph::max_reduce`] node.
    pub fn argmax(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxReduce { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    fn reduce(&mut self, kind: Reduce, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        let x = self.value(input).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let row = &mut out[o * inner..(o + 1) * inner];
            for j in 0..len {
                let src = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                for i in 0..inner {
                    row[i] += src[i];
                }
            }
        }
        if kind == Reduce::Mean && len > 0 {
            let inv = 1.0 / len as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut new_shape = shape;
        new_shape[axis] = 1;
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Reduce { kind, input, axis }, &[input]))
    }

    /// Mean along `axis` (kept with size 1).
    pub fn mean_reduce(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduce::Mean, input, axis)
    }

    /// Sum along `axis` (kept with size 1).
    pub fn sum_reduce(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduce::Sum, input, axis)
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(input), &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).numel().max(1) as f64;
        let s = self.sum(input);
        self.scale(s, 1.0 / n)
    }

    /// Cross product over a last axis of length 3.
    pub fn cross(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb || sa.last() != Some(&3) {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross",
                lhs: sa,
                rhs: sb,
            });
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; x.len()];
        for ((o, u), v) in out.chunks_exact_mut(3).zip(x.chunks_exact(3)).zip(y.chunks_exact(3)) {
            o.copy_from_slice(&cross3(u, v));
        }
        Ok(self.push(Tensor::new(sa, out)?, Op::Cross(a, b), &[a, b]))
    }

    /// Divides every vector along the last axis by its Euclidean norm; zero
    /// vectors map to zero.
    pub fn normalize(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let d = *shape.last().ok_or(AutodiffError::InvalidAxis { axis: 0, rank: 0 })?;
        let x = self.value(input).data();
        let mut out = vec![0.0; x.len()];
        let mut norms = Vec::with_capacity(x.len() / d.max(1));
        for (o, v) in out.chunks_exact_mut(d).zip(x.chunks_exact(d)) {
            let n = v.iter().map(|e| e * e).sum::<f64>().sqrt();
            norms.push(n);
            if n > 0.0 {
                for (oi, vi) in o.iter_mut().zip(v) {
                    *oi = vi / n;
                }
            }
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::Normalize { input, norms }, &[input]))
    }

    /// Element-wise binary cross entropy between `sigmoid(logits)` and
    /// constant `targets`, in the overflow-free logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if targets.len() != self.value(logits).numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let out = self
            .value(logits)
            .data()
            .iter()
            .zip(targets)
            .map(|(&s, &t)| bce_logit(s, t))
            .collect();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Accumulates d(loss)/d(node) for every node that requires a gradient.
    /// Gradients of intermediate nodes are released once propagated; leaf
    /// gradients are kept.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(AutodiffError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| matches!(self.nodes[i].op, Op::Leaf))
                    .map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        macro_rules! acc {
            ($v:expr) => {
                grads[$v.0].get_or_insert_with(|| vec![0.0; self.nodes[$v.0].value.numel()])
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let sb = self.shape(b);
                let (k, n) = (sb[0], sb[1]);
                let m = self.value(a).numel() / k.max(1);
                if self.wants(a) {
                    let bd = self.value(b).data();
                    gemm(self.precision, m, n, k, g, false, bd, true, 1.0, acc!(a));
                }
                if self.wants(b) {
                    let ad = self.value(a).data();
                    gemm(self.precision, k, m, n, ad, true, g, false, 1.0, acc!(b));
                }
            }
            Op::Linear { x, w, b, relu } => {
                let (x, w) = (*x, *w);
                let (k, n) = (self.shape(w)[0], self.shape(w)[1]);
                let m = self.value(x).numel() / k.max(1);
                let masked;
                let g = if *relu {
                    masked = g
                        .iter()
                        .zip(out.data())
                        .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
                        .collect::<Vec<_>>();
                    &masked[..]
                } else {
                    g
                };
                if self.wants(x) {
                    let wd = self.value(w).data();
                    gemm(self.precision, m, n, k, g, false, wd, true, 1.0, acc!(x));
                }
                if self.wants(w) {
                    let xd = self.value(x).data();
                    gemm(self.precision, k, m, n, xd, true, g, false, 1.0, acc!(w));
                }
                if let Some(b) = *b {
                    if self.wants(b) {
                        let groups = self.value(b).numel() / n;
                        let rows = m / groups;
                        let gb = acc!(b);
                        for (r, row) in g.chunks_exact(n).enumerate() {
                            let dst = &mut gb[(r / rows) * n..][..n];
                            for (d, s) in dst.iter_mut().zip(row) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                let out_shape = out.shape();
                let sa = broadcast_strides(self.shape(a), out_shape);
                let sb = broadcast_strides(self.shape(b), out_shape);
                let (da, db) = (self.value(a).data(), self.value(b).data());
                if self.wants(a) {
                    let ga = acc!(a);
                    match kind {
                        Binary::Add | Binary::Sub => visit2(out_shape, &sa, &sb, |o, i, _| ga[i] += g[o]),
                        Binary::Mul => visit2(out_shape, &sa, &sb, |o, i, j| ga[i] += g[o] * db[j]),
                        Binary::Div => visit2(out_shape, &sa, &sb, |o, i, j| ga[i] += g[o] / db[j]),
                    }
                }
                if self.wants(b) {
                    let gb = acc!(b);
                    match kind {
                        Binary::Add => visit2(out_shape, &sa, &sb, |o, _, j| gb[j] += g[o]),
                        Binary::Sub => visit2(out_shape, &sa, &sb, |o, _, j| gb[j] -= g[o]),
                        Binary::Mul => visit2(out_shape, &sa, &sb, |o, i, j| gb[j] += g[o] * da[i]),
                        Binary::Div => {
                            visit2(out_shape, &sa, &sb, |o, i, j| gb[j] -= g[o] * da[i] / (db[j] * db[j]))
                        }
                    }
                }
            }
            Op::Unary(kind, a) => {
                let a = *a;
                let x = self.value(a).data();
                let y = out.data();
                let ga = acc!(a);
                match *kind {
                    Unary::Relu => {
                        for i in 0..g.len() {
                            if x[i] > 0.0 {
                                ga[i] += g[i];
                            }
                        }
                    }
                    Unary::Sigmoid => {
                        for i in 0..g.len() {
                            ga[i] += g[i] * y[i] * (1.0 - y[i]);
                        }
                    }
                    Unary::Square => {
                        for i in 0..g.len() {
                            ga[i] += 2.0 * x[i] * g[i];
                        }
                    }
                    Unary::Sqrt => {
                        for i in 0..g.len() {
                            if y[i] > 0.0 {
                                ga[i] += g[i] / (2.0 * y[i]);
                            }
                        }
                    }
                    Unary::Scale(s) => {
                        for i in 0..g.len() {
                            ga[i] += g[i] * s;
                        }
                    }
                }
            }
            Op::Concat { a, b, axis } => {
                let (a, b) = (*a, *b);
                let (outer, la, inner) = axis_split(self.shape(a), *axis).expect("checked");
                let lb = self.shape(b)[*axis];
                let total = (la + lb) * inner;
                if self.wants(a) {
                    let ga = acc!(a);
                    for o in 0..outer {
                        for (d, s) in ga[o * la * inner..(o + 1) * la * inner]
                            .iter_mut()
                            .zip(&g[o * total..o * total + la * inner])
                        {
                            *d += s;
                        }
                    }
                }
                if self.wants(b) {
                    let gb = acc!(b);
                    for o in 0..outer {
                        for (d, s) in gb[o * lb * inner..(o + 1) * lb * inner]
                            .iter_mut()
                            .zip(&g[o * total + la * inner..(o + 1) * total])
                        {
                            *d += s;
                        }
                    }
                }
            }
            Op::Narrow { input, axis, start } => {
                let (outer, full, inner) = axis_split(self.shape(*input), *axis).expect("checked");
                let len = out.shape()[*axis];
                let gi = acc!(*input);
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    for (d, s) in gi[base..base + len * inner]
                        .iter_mut()
                        .zip(&g[o * len * inner..(o + 1) * len * inner])
                    {
                        *d += s;
                    }
                }
            }
            Op::Expand(input) => {
                let s = broadcast_strides(self.shape(*input), out.shape());
                let gi = acc!(*input);
                visit2(out.shape(), &s, &s, |o, i, _| gi[i] += g[o]);
            }
            Op::Reshape(input) => {
                for (d, s) in acc!(*input).iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis).expect("checked");
                let y = out.data();
                let gi = acc!(*input);
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            gi[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
            Op::MaxReduce { input, axis, argmax } => {
                let (outer, len, inner) = axis_split(self.shape(*input), *axis).expect("checked");
                let gi = acc!(*input);
                for o in 0..outer {
                    for i in 0..inner {
                        let r = o * inner + i;
                        gi[(o * len + argmax[r]) * inner + i] += g[r];
                    }
                }
            }
            Op::Reduce { kind, input, axis } => {
                let (outer, len, inner) = axis_split(self.shape(*input), *axis).expect("checked");
                let f = match kind {
                    Reduce::Sum => 1.0,
                    Reduce::Mean => 1.0 / len.max(1) as f64,
                };
                let gi = acc!(*input);
                for o in 0..outer {
                    for j in 0..len {
                        let dst = &mut gi[(o * len + j) * inner..(o * len + j + 1) * inner];
                        for (d, s) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                            *d += s * f;
                        }
                    }
                }
            }
            Op::SumAll(input) => {
                let g0 = g[0];
                acc!(*input).iter_mut().for_each(|d| *d += g0);
            }
            Op::Cross(a, b) => {
                let (a, b) = (*a, *b);
                if self.wants(a) {
                    let bd = self.value(b).data();
                    let ga = acc!(a);
                    for ((d, v), gg) in ga.chunks_exact_mut(3).zip(bd.chunks_exact(3)).zip(g.chunks_exact(3)) {
                        let c = cross3(v, gg);
                        d.iter_mut().zip(c).for_each(|(d, c)| *d += c);
                    }
                }
                if self.wants(b) {
                    let ad = self.value(a).data();
                    let gb = acc!(b);
                    for ((d, u), gg) in gb.chunks_exact_mut(3).zip(ad.chunks_exact(3)).zip(g.chunks_exact(3)) {
                        let c = cross3(gg, u);
                        d.iter_mut().zip(c).for_each(|(d, c)| *d += c);
                    }
                }
            }
            Op::Normalize { input, norms } => {
                let d = *out.shape().last().unwrap();
                let y = out.data();
                let gi = acc!(*input);
                for (r, &n) in norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    let s = r * d..(r + 1) * d;
                    let dot: f64 = y[s.clone()].iter().zip(&g[s.clone()]).map(|(a, b)| a * b).sum();
                    for i in s {
                        gi[i] += (g[i] - y[i] * dot) / n;
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let x = self.value(*logits).data();
                let gi = acc!(*logits);
                for i in 0..g.len() {
                    gi[i] += g[i] * (sigmoid(x[i]) - targets[i]);
                }
            }
        }
    }
}

fn cross3(u: &[f64], v: &[f64]) -> [f64; 3] {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-[t ln s(x) + (1 - t) ln(1 - s(x))]` with `s` the logistic function.
pub fn bce_logit(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_matches_composed_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = rand_tensor(&mut rng, &[2, 3, 4]);
        let w = rand_tensor(&mut rng, &[4, 5]);
        let b = rand_tensor(&mut rng, &[1, 5]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
        let fused = g.linear(xv, wv, Some(bv), true).unwrap();
        let y = g.matmul(xv, wv).unwrap();
        let y = g.add(y, bv).unwrap();
        let composed = g.relu(y);
        for (a, c) in g.value(fused).data().iter().zip(g.value(composed).data()) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let params = vec![rand_tensor(&mut rng, &[2, 3, 4]), rand_tensor(&mut rng, &[4, 5]), rand_tensor(&mut rng, &[1, 5])];
        for relu in [false, true] {
            let err = grad_check::<AutodiffError, _>(&params, 1e-5, |g, p| {
                let y = g.linear(p[0], p[1], Some(p[2]), relu)?;
                let y = g.square(y);
                Ok(g.sum(y))
            })
            .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn grouped_bias_linear_matches_composed_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = rand_tensor(&mut rng, &[2, 3, 4]);
        let w = rand_tensor(&mut rng, &[4, 5]);
        let b = rand_tensor(&mut rng, &[2, 1, 5]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
        let fused = g.linear(xv, wv, Some(bv), true).unwrap();
        let y = g.matmul(xv, wv).unwrap();
        let y = g.add(y, bv).unwrap();
        let composed = g.relu(y);
        for (a, c) in g.value(fused).data().iter().zip(g.value(composed).data()) {
            assert!((a - c).abs() < 1e-12);
        }
        let bad = g.constant(Tensor::zeros(&[4, 1, 5]));
        assert!(g.linear(xv, wv, Some(bad), false).is_err());
    }

    #[test]
    fn grouped_bias_linear_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let params = vec![rand_tensor(&mut rng, &[2, 3, 4]), rand_tensor(&mut rng, &[4, 5]), rand_tensor(&mut rng, &[2, 1, 5])];
        let err = grad_check::<AutodiffError, _>(&params, 1e-5, |g, p| {
            let y = g.linear(p[0], p[1], Some(p[2]), false)?;
            let y = g.square(y);
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn f32_graph_tracks_f64_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let x = rand_tensor(&mut rng, &[6, 8]);
        let w = rand_tensor(&mut rng, &[8, 3]);
        let run = |precision| {
            let mut g = Graph::with_precision(precision);
            let (xv, wv) = (g.leaf(x.clone(), true), g.leaf(w.clone(), true));
            let y = g.linear(xv, wv, None, false).unwrap();
            let y = g.square(y);
            let loss = g.sum(y);
            let grads = g.backward(loss).unwrap();
            (g.value(loss).data()[0], grads.get(wv).unwrap().clone())
        };
        let (l64, g64) = run(MatmulPrecision::F64);
        let (l32, g32) = run(MatmulPrecision::F32);
        assert!((l64 - l32).abs() < 1e-4 * l64.abs());
        for (a, b) in g64.data().iter().zip(g32.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_of_equal_inputs_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![0.0; 3]));
        let y = g.softmax(x, 0).unwrap();
        for &v in g.value(y).data() {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn max_reduce_records_argmax() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1.0, 5.0, 2.0]));
        let m = g.max_reduce(x, 0).unwrap();
        assert_eq!(g.value(m).data(), &[5.0]);
        assert_eq!(g.argmax(m).unwrap(), &[1]);
    }

    #[test]
    fn max_reduce_tie_routes_to_lowest_index() {
        let x = Tensor::from_vec(vec![3.0, 3.0, 1.0]);
        let mut g = Graph::new();
        let v = g.param(&x);
        let m = g.max_reduce(v, 0).unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(v).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, &[4, 3]);
        let b = rand_tensor(&mut rng, &[3, 2]);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(va, vb).unwrap();
        assert_eq!(g.shape(c), &[4, 2]);
        for i in 0..4 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..3 {
                    s += a.data()[i * 3 + p] * b.data()[p * 2 + j];
                }
                assert!((g.value(c).data()[i * 2 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_matmul_flattens_leading_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_tensor(&mut rng, &[2, 3, 4]);
        let b = rand_tensor(&mut rng, &[4, 5]);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a), g.constant(b));
        let c = g.matmul(va, vb).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 5]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        let c = g_const(&mut g, &[4]);
        assert!(matches!(g.add(a, c), Err(AutodiffError::ShapeMismatch { .. })));
    }

    fn g_const(g: &mut Graph<'_>, shape: &[usize]) -> Var {
        g.constant(Tensor::zeros(shape))
    }

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::full(&[2, 3, 2], 0.7);
        let mut g = Graph::new();
        let v = g.param(&x);
        let s = g.sum(v);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(v).unwrap().data().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn relu_gates_gradient() {
        let x = Tensor::from_vec(vec![-1.0, 2.0]);
        let mut g = Graph::new();
        let v = g.param(&x);
        let r = g.relu(v);
        let s = g.sum(r);
        assert_eq!(g.backward(s).unwrap().get(v).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn duplicated_input_accumulates() {
        let x = Tensor::from_vec(vec![1.5, -2.0]);
        let mut g = Graph::new();
        let v = g.param(&x);
        let y = g.add(v, v).unwrap();
        let s = g.sum(y);
        assert_eq!(g.backward(s).unwrap().get(v).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let v = g.leaf(Tensor::zeros(&[2]), true);
        assert_eq!(g.backward(v).unwrap_err(), AutodiffError::NotScalar(vec![2]));
    }

    #[test]
    fn grad_check_square_scalar() {
        let err: f64 = grad_check::<AutodiffError, _>(&[Tensor::scalar(3.0)], 1e-5, |g, v| {
            Ok(g.square(v[0]))
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn grad_check_sigmoid_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, &[3, 4]);
        let w = rand_tensor(&mut rng, &[4, 2]);
        let err = grad_check::<AutodiffError, _>(&[w], 1e-5, |g, v| {
            let xv = g.constant(x.clone());
            let y = g.matmul(xv, v[0])?;
            let s = g.sigmoid(y);
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn grad_check_flags_max_at_tie() {
        let err = grad_check::<AutodiffError, _>(&[Tensor::from_vec(vec![2.0, 2.0])], 1e-5, |g, v| {
            g.max_reduce(v[0], 0)
        })
        .unwrap();
        assert!(err > 0.1, "tie should be flagged, got {err}");
    }

    #[test]
    fn three_layer_mlp_with_all_ops_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = rand_tensor(&mut rng, &[2, 5, 3]);
        let params = vec![
            rand_tensor(&mut rng, &[3, 6]),
            rand_tensor(&mut rng, &[1, 6]),
            rand_tensor(&mut rng, &[12, 6]),
            rand_tensor(&mut rng, &[6, 4]),
            rand_tensor(&mut rng, &[4, 3]),
        ];
        let target = Tensor::new(vec![2, 1, 3], vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let err = grad_check::<AutodiffError, _>(&params, 1e-5, |g, p| {
            let xv = g.constant(x.clone());
            let h = g.matmul(xv, p[0])?;
            let h = g.add(h, p[1])?;
            let h = g.relu(h);
            let pooled = g.max_reduce(h, 1)?;
            let pooled = g.expand(pooled, &[2, 5, 6])?;
            let cat = g.concat(h, pooled, 2)?;
            let h2 = g.matmul(cat, p[2])?;
            let h2 = g.sigmoid(h2);
            let att = g.softmax(h2, 1)?;
            let h2 = g.mul(h2, att)?;
            let h3 = g.matmul(h2, p[3])?;
            let mean = g.mean_reduce(h3, 1)?;
            let sq = g.square(mean);
            let sq = g.scale(sq, 0.5);
            let sq_sum = g.sum_reduce(sq, 2)?;
            let root = g.sqrt(sq_sum);
            let dir = g.matmul(mean, p[4])?;
            let n = g.normalize(dir)?;
            let t = g.constant(target.clone());
            let c = g.cross(n, t)?;
            let c2 = g.square(c);
            let first = g.narrow(n, 2, 0, 1)?;
            let flat = g.reshape(first, &[2])?;
            let bce = g.bce_with_logits(flat, &[1.0, 0.0])?;
            let three = g_const_full(g, 3.0);
            let d = g.div(root, three)?;
            let tenth = g_const_full(g, 0.1);
            let d = g.sub(d, tenth)?;
            let a = g.sum(c2);
            let b = g.sum(bce);
            let e = g.sum(d);
            let ab = g.add(a, b)?;
            g.add(ab, e)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    fn g_const_full(g: &mut Graph<'_>, v: f64) -> Var {
        g.constant(Tensor::scalar(v))
    }

    #[test]
    fn normalize_has_unit_length_and_exact_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = rand_tensor(&mut rng, &[4, 3]);
        let mut g = Graph::new();
        let x = g.constant(v.clone());
        let n = g.normalize(x).unwrap();
        for row in g.value(n).data().chunks(3) {
            assert_relative_eq!(row.iter().map(|a| a * a).sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let w = Tensor::from_vec(vec![0.3, -0.7, 1.1]);
        let err = grad_check::<AutodiffError, _>(&[v], 1e-5, |g, p| {
            let n = g.normalize(p[0])?;
            let wv = g.constant(w.clone());
            let y = g.mul(n, wv)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let a = rand_tensor(&mut rng, &[8, 16]);
            let b = rand_tensor(&mut rng, &[16, 4]);
            let mut g = Graph::new();
            let (va, vb) = (g.constant(a), g.constant(b));
            let c = g.matmul(va, vb).unwrap();
            let s = g.softmax(c, 0).unwrap();
            g.value(s).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        assert!(bce_logit(1000.0, 1.0).abs() < 1e-12);
        assert_relative_eq!(bce_logit(-1000.0, 1.0), 1000.0, epsilon = 1e-9);
        assert_relative_eq!(bce_logit(0.0, 1.0), std::f64::consts::LN_2, epsilon = 1e-15);
    }
}
