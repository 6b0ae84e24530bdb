//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive in creation order. Because inputs always
//! precede outputs, walking the node list backwards is a valid topological
//! order, so gradient accumulation order is fixed and runs are reproducible.

use std::rc::Rc;

use super::tensor::{axis_extents, strides};
use super::{NumError, Tensor};

/// Lower clamp applied to every `log` input.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Bmm(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumAxis { input: Var, axis: usize },
    Softmax { input: Var, axis: usize },
    LogSumExp { input: Var, axis: usize },
    Gather { input: Var, indices: Rc<[usize]> },
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `var`, or `None` when `var` does not
    /// influence the root.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumError {
    NumError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), NumError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(mismatch(op, a, b))
    }
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<(), NumError> {
    if axis < t.rank() {
        Ok(())
    } else {
        Err(NumError::BadAxis {
            op,
            axis,
            shape: t.shape().to_vec(),
        })
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

// out[k x n] += a^T b where a is [m x k], b is [m x n]
fn matmul_at_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

// out[m x k] += a b^T where a is [m x n], b is [k x n]
fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, NumError> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, NumError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.push(name, out, op, &[x])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumError> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape(), data)?;
        self.push(name, out, op, &[a, b])
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(mismatch("matmul", av, bv));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        matmul_raw(av.data(), bv.data(), m, k, n, &mut out);
        let out = Tensor::new(&[m, n], out)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Batched matmul `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 3 || bv.rank() != 3 || av.shape()[0] != bv.shape()[0] || av.shape()[2] != bv.shape()[1] {
            return Err(mismatch("bmm", av, bv));
        }
        let (bs, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            matmul_raw(
                &av.data()[i * m * k..(i + 1) * m * k],
                &bv.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let out = Tensor::new(&[bs, m, n], out)?;
        self.push("bmm", out, Op::Bmm(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Adds a bias vector `[n]` to every row of `a` (last axis `n`).
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let (av, bv) = (self.value(a), self.value(bias));
        let n = bv.len();
        if bv.rank() != 1 || av.shape().last() != Some(&n) {
            return Err(mismatch("add_bias", av, bv));
        }
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv.data()[i % n])
            .collect();
        let out = Tensor::new(av.shape(), data)?;
        self.push("add_bias", out, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, NumError> {
        self.scale(a, -1.0)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, NumError> {
        let first = self.value(*inputs.first().ok_or(NumError::Empty { op: "concat" })?);
        check_axis("concat", first, axis)?;
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = 0;
        for &v in inputs {
            let t = self.value(v);
            let ok = t.rank() == first.rank()
                && t.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(mismatch("concat", first, t));
            }
            out_shape[axis] += t.shape()[axis];
        }
        let (outer, _, inner) = axis_extents(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(&out_shape, data)?;
        self.push(
            "concat",
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    /// Natural log with inputs clamped to at least [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary("log", a, |x| x.max(LOG_FLOOR).ln(), Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        let s = self.value(a).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(NumError::Empty { op: "mean" });
        }
        let m = t.sum() / t.len() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, NumError> {
        let t = self.value(a);
        check_axis("sum_axis", t, axis)?;
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &t.data()[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(&shape, data)?;
        self.push("sum_axis", out, Op::SumAxis { input: a, axis }, &[a])
    }

    /// Softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumError> {
        let t = self.value(a);
        check_axis("softmax", t, axis)?;
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let mut data = vec![0.0; t.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| t.data()[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (t.data()[idx(k)] - max).exp();
                    data[idx(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    data[idx(k)] /= z;
                }
            }
        }
        let out = Tensor::new(t.shape(), data)?;
        self.push("softmax", out, Op::Softmax { input: a, axis }, &[a])
    }

    /// Stable `log(sum(exp(x)))` along `axis`, removing it.
    pub fn log_sum_exp(&mut self, a: Var, axis: usize) -> Result<Var, NumError> {
        let t = self.value(a);
        check_axis("log_sum_exp", t, axis)?;
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| t.data()[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..len).map(|k| (t.data()[idx(k)] - max).exp()).sum();
                data[o * inner + i] = max + z.ln();
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(&shape, data)?;
        self.push("log_sum_exp", out, Op::LogSumExp { input: a, axis }, &[a])
    }

    /// `out.flat[i] = a.flat[indices[i]]`, reshaped to `shape`. Backward
    /// scatter-adds, so repeated indices are allowed.
    pub fn gather(&mut self, a: Var, indices: Rc<[usize]>, shape: &[usize]) -> Result<Var, NumError> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != indices.len() {
            return Err(NumError::DataLength {
                shape: shape.to_vec(),
                len: indices.len(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.len()) {
            return Err(NumError::IndexOutOfRange {
                op: "gather",
                index: bad,
                len: t.len(),
            });
        }
        let data = indices.iter().map(|&i| t.data()[i]).collect();
        let out = Tensor::new(shape, data)?;
        self.push("gather", out, Op::Gather { input: a, indices }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumError> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(NumError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = t.reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Axis permutation, e.g. `[1, 0, 2]` swaps the first two axes.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, NumError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(NumError::ShapeMismatch {
                op: "permute",
                lhs: shape,
                rhs: axes.to_vec(),
            });
        }
        let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
        let in_strides = strides(&shape);
        let n: usize = shape.iter().product();
        let mut indices = Vec::with_capacity(n);
        let mut counter = vec![0usize; out_shape.len()];
        for _ in 0..n {
            let src: usize = counter.iter().zip(axes).map(|(&c, &ax)| c * in_strides[ax]).sum();
            indices.push(src);
            for d in (0..counter.len()).rev() {
                counter[d] += 1;
                if counter[d] < out_shape[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
        self.gather(a, indices.into(), &out_shape)
    }

    /// Selects `rows` along the first axis.
    pub fn index_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NumError> {
        let shape = self.shape(a).to_vec();
        let Some((&n, rest)) = shape.split_first() else {
            return Err(NumError::BadAxis { op: "index_rows", axis: 0, shape });
        };
        let width: usize = rest.iter().product();
        let mut indices = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= n {
                return Err(NumError::IndexOutOfRange {
                    op: "index_rows",
                    index: r,
                    len: n,
                });
            }
            indices.extend(r * width..(r + 1) * width);
        }
        let mut out_shape = vec![rows.len()];
        out_shape.extend_from_slice(rest);
        self.gather(a, indices.into(), &out_shape)
    }

    /// Contiguous `[start, end)` range along `axis`.
    pub fn slice_axis(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var, NumError> {
        let shape = self.shape(a).to_vec();
        check_axis("slice_axis", self.value(a), axis)?;
        if start > end || end > shape[axis] {
            return Err(NumError::IndexOutOfRange {
                op: "slice_axis",
                index: end,
                len: shape[axis],
            });
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let mut indices = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            for k in start..end {
                let base = (o * len + k) * inner;
                indices.extend(base..base + inner);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        self.gather(a, indices.into(), &out_shape)
    }

    /// Reverse pass from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        let root_value = &self.nodes[root.0].value;
        grads[root.0] = Some(Tensor::ones(root_value.shape()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn elementwise(&self, grads: &mut [Option<Tensor>], x: Var, g: &Tensor, df: impl Fn(usize, f64) -> f64) {
        if !self.nodes[x.0].requires_grad {
            return;
        }
        let data = g.data().iter().enumerate().map(|(i, &gv)| gv * df(i, gv)).collect();
        let t = Tensor::new(g.shape(), data).expect("gradient shape");
        self.accumulate(grads, x, t);
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    matmul_a_bt(g.data(), bv.data(), m, n, k, &mut ga);
                    self.accumulate(grads, *a, Tensor::new(&[m, k], ga).expect("shape"));
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    matmul_at_b(av.data(), g.data(), m, k, n, &mut gb);
                    self.accumulate(grads, *b, Tensor::new(&[k, n], gb).expect("shape"));
                }
            }
            Op::Bmm(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bs, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        matmul_a_bt(
                            &g.data()[i * m * n..(i + 1) * m * n],
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            m,
                            n,
                            k,
                            &mut ga[i * m * k..(i + 1) * m * k],
                        );
                    }
                    self.accumulate(grads, *a, Tensor::new(&[bs, m, k], ga).expect("shape"));
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        matmul_at_b(
                            &av.data()[i * m * k..(i + 1) * m * k],
                            &g.data()[i * m * n..(i + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut gb[i * k * n..(i + 1) * k * n],
                        );
                    }
                    self.accumulate(grads, *b, Tensor::new(&[bs, k, n], gb).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.elementwise(grads, *b, g, |_, _| -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.elementwise(grads, *a, g, |i, _| bv.data()[i]);
                self.elementwise(grads, *b, g, |i, _| av.data()[i]);
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.elementwise(grads, *a, g, |i, _| 1.0 / bv.data()[i]);
                self.elementwise(grads, *b, g, |i, _| -av.data()[i] / (bv.data()[i] * bv.data()[i]));
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[bias.0].requires_grad {
                    let n = self.value(*bias).len();
                    let mut gb = vec![0.0; n];
                    for (i, &gv) in g.data().iter().enumerate() {
                        gb[i % n] += gv;
                    }
                    self.accumulate(grads, *bias, Tensor::new(&[n], gb).expect("shape"));
                }
            }
            Op::Scale(a, c) => self.elementwise(grads, *a, g, |_, _| *c),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_extents(out.shape(), *axis);
                let mut offset = 0;
                let total = out.shape()[*axis] * inner;
                for &v in inputs {
                    let t = self.value(v);
                    let chunk = t.shape()[*axis] * inner;
                    if self.nodes[v.0].requires_grad {
                        let mut data = Vec::with_capacity(t.len());
                        for o in 0..outer {
                            let start = o * total + offset;
                            data.extend_from_slice(&g.data()[start..start + chunk]);
                        }
                        self.accumulate(grads, v, Tensor::new(t.shape(), data).expect("shape"));
                    }
                    offset += chunk;
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                self.elementwise(grads, *a, g, |i, _| if av.data()[i] > 0.0 { 1.0 } else { 0.0 });
            }
            Op::Softplus(a) => {
                let av = self.value(*a);
                self.elementwise(grads, *a, g, |i, _| sigmoid(av.data()[i]));
            }
            Op::Exp(a) => self.elementwise(grads, *a, g, |i, _| out.data()[i]),
            Op::Log(a) => {
                let av = self.value(*a);
                self.elementwise(grads, *a, g, |i, _| {
                    let x = av.data()[i];
                    if x > LOG_FLOOR {
                        1.0 / x
                    } else {
                        0.0
                    }
                });
            }
            Op::Tanh(a) => self.elementwise(grads, *a, g, |i, _| 1.0 - out.data()[i] * out.data()[i]),
            Op::Square(a) => {
                let av = self.value(*a);
                self.elementwise(grads, *a, g, |i, _| 2.0 * av.data()[i]);
            }
            Op::Sum(a) => {
                let shape = self.shape(*a);
                self.accumulate(grads, *a, Tensor::full(shape, g.item()));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(t.shape(), g.item() / t.len() as f64));
            }
            Op::SumAxis { input, axis } => {
                let t = self.value(*input);
                let (outer, len, inner) = axis_extents(t.shape(), *axis);
                let mut data = vec![0.0; t.len()];
                for o in 0..outer {
                    for k in 0..len {
                        let dst = &mut data[(o * len + k) * inner..(o * len + k + 1) * inner];
                        dst.copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                self.accumulate(grads, *input, Tensor::new(t.shape(), data).expect("shape"));
            }
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = axis_extents(out.shape(), *axis);
                let mut data = vec![0.0; out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g.data()[idx(k)] * out.data()[idx(k)]).sum();
                        for k in 0..len {
                            data[idx(k)] = out.data()[idx(k)] * (g.data()[idx(k)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(out.shape(), data).expect("shape"));
            }
            Op::LogSumExp { input, axis } => {
                let t = self.value(*input);
                let (outer, len, inner) = axis_extents(t.shape(), *axis);
                let mut data = vec![0.0; t.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let lse = out.data()[o * inner + i];
                        let gv = g.data()[o * inner + i];
                        for k in 0..len {
                            let j = (o * len + k) * inner + i;
                            data[j] = gv * (t.data()[j] - lse).exp();
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(t.shape(), data).expect("shape"));
            }
            Op::Gather { input, indices } => {
                let t = self.value(*input);
                let mut data = vec![0.0; t.len()];
                for (&src, &gv) in indices.iter().zip(g.data()) {
                    data[src] += gv;
                }
                self.accumulate(grads, *input, Tensor::new(t.shape(), data).expect("shape"));
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a);
                self.accumulate(grads, *a, g.reshaped(shape).expect("shape"));
            }
        }
    }
}
