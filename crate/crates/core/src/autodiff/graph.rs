//! Reverse-mode tape over dense tensors.
//!
//! Every op appends a node holding its forward value and whatever it needs
//! for the reverse pass. Nodes are only ever appended, so the tape is in
//! topological order by construction and `backward` is a single reverse sweep.

use std::borrow::Cow;

use rand::Rng;

use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// Second operand broadcast over the leading axes of the first.
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    TransposeLast(Var),
    Reshape(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Relu(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    SumAll(Var),
    ConcatLast(Vec<Var>),
    SliceLast {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recording of tensor operations that can be differentiated in reverse.
///
/// Leaves may borrow their values (`'a`), so model parameters are bound to a
/// graph without copying.
#[derive(Debug)]
pub struct Graph<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Leaf owning its value.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    /// Leaf borrowing its value, e.g. a model parameter.
    pub fn leaf_ref(&mut self, value: &'a Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a + b` where `b`'s shape equals the trailing axes of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || !sa.ends_with(sb) {
            return Err(self.shape_err("add", a, b));
        }
        let bv = self.value(b).data();
        let period = bv.len();
        let mut out = self.value(a).clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = *o + bv[i % period];
        }
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_op(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push_op(value, Op::Scale(x, s), &[x])
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(Error::argument(format!(
                "transpose needs rank >= 2, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[r - 2], shape[r - 1]);
        let batch = shape[..r - 2].iter().product::<usize>();
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..batch {
            let off = b * rows * cols;
            for i in 0..rows {
                for j in 0..cols {
                    out[off + j * rows + i] = src[off + i * cols + j];
                }
            }
        }
        let mut new_shape = shape;
        new_shape.swap(r - 2, r - 1);
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push_op(value, Op::TransposeLast(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push_op(value, Op::Reshape(x), &[x]))
    }

    /// Softmax over the last axis, computed after subtracting the row maximum.
    pub fn softmax(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let c = src.last_dim();
        let mut out = src.clone();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        self.push_op(out, Op::Softmax(x), &[x])
    }

    /// Layer normalization over the last axis with learnable gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.shape(gain) != [c] {
            return Err(self.shape_err("layer_norm gain", x, gain));
        }
        if self.shape(bias) != [c] {
            return Err(self.shape_err("layer_norm bias", x, bias));
        }
        let src = self.value(x);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let n = T::lit(c as f64);
        let rows = src.len() / c;
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let row = &src.data()[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(src.shape().to_vec(), out)?;
        Ok(self.push_op(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu_value);
        self.push_op(value, Op::Gelu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push_op(value, Op::Relu(x), &[x])
    }

    /// Inverted dropout. With `rng == None` (evaluation) or `p == 0` this is
    /// the identity and returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::argument(format!("dropout rate {p} outside [0, 1)")));
        }
        let rng = match rng {
            Some(r) if p > 0.0 => r,
            _ => return Ok(x),
        };
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push_op(value, Op::Dropout { x, mask }, &[x]))
    }

    /// Arithmetic mean over `axis`, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::argument(format!(
                "mean over axis {axis} of shape {shape:?}"
            )));
        }
        let (outer, len, inner) = outer_inner(&shape, axis);
        let src = self.value(x).data();
        let inv = T::one() / T::lit(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + src[base + i];
                }
            }
        }
        for v in &mut out {
            *v = *v * inv;
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push_op(value, Op::Mean { x, axis }, &[x]))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push_op(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    /// Concatenation of rank-2 tensors along the last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::argument("concat of nothing"))?;
        let rows = self.shape(first)[0];
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(self.shape_err("concat_last", first, p));
            }
            total += s[1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        Ok(self.push_op(value, Op::ConcatLast(parts.to_vec()), parts))
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + len > s[1] || len == 0 {
            return Err(Error::argument(format!(
                "column slice {start}..{} of shape {s:?}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(s[0] * len);
        for r in 0..s[0] {
            out.extend_from_slice(&self.value(x).row(r)[start..start + len]);
        }
        let value = Tensor::new(vec![s[0], len], out)?;
        Ok(self.push_op(value, Op::SliceLast { x, start }, &[x]))
    }

    /// Concatenation of rank-2 tensors along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::argument("concat of nothing"))?;
        let cols = self.value(first).last_dim();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(self.shape_err("concat_rows", first, p));
            }
            rows += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push_op(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rows `start..start + len` of a rank-2 tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + len > s[0] || len == 0 {
            return Err(Error::argument(format!(
                "row slice {start}..{} of shape {s:?}",
                start + len
            )));
        }
        let c = s[1];
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::new(vec![len, c], data)?;
        Ok(self.push_op(value, Op::SliceRows { x, start }, &[x]))
    }

    /// Cross-entropy of a logit vector against a class index.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if z.is_empty() || label >= z.len() {
            return Err(Error::argument(format!("label {label} for {} logits", z.len())));
        }
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let sum = z.iter().map(|&v| (v - max).exp()).sum::<T>();
        let lse = max + sum.ln();
        let probs = z.iter().map(|&v| (v - max).exp() / sum).collect();
        let loss = lse - z[label];
        Ok(self.push_op(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, label, probs },
            &[logits],
        ))
    }

    /// Propagates `d loss / d node` back to every leaf that requires a
    /// gradient and adds it to that leaf's accumulated gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::argument(format!(
                "backward from a non-scalar of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::ones(self.shape(loss)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            if let Op::Leaf = node.op {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.reverse(i, &g, &mut adj)?;
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn reverse(&self, i: usize, g: &Tensor<T>, adj: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    matmul_nt_acc(gd, self.value(*b).data(), &mut da, m, n, k);
                    accumulate(adj, *a, Tensor::new(sa.to_vec(), da)?)?;
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    matmul_tn_acc(self.value(*a).data(), gd, &mut db, m, k, n);
                    accumulate(adj, *b, Tensor::new(sb.to_vec(), db)?)?;
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(adj, *a, g.clone())?;
                }
                if self.wants(*b) {
                    let sb = self.shape(*b).to_vec();
                    let period = self.value(*b).len();
                    let mut db = vec![T::zero(); period];
                    for (j, &v) in gd.iter().enumerate() {
                        db[j % period] = db[j % period] + v;
                    }
                    accumulate(adj, *b, Tensor::new(sb, db)?)?;
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if self.wants(this) {
                        let o = self.value(other).data();
                        let d = gd.iter().zip(o).map(|(&x, &y)| x * y).collect();
                        accumulate(adj, this, Tensor::new(self.shape(this).to_vec(), d)?)?;
                    }
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                accumulate(adj, *x, g.map(|v| v * s))?;
            }
            Op::TransposeLast(x) => {
                let shape = self.shape(*x).to_vec();
                let r = shape.len();
                let (rows, cols) = (shape[r - 2], shape[r - 1]);
                let batch = shape[..r - 2].iter().product::<usize>();
                let mut dx = vec![T::zero(); gd.len()];
                for b in 0..batch {
                    let off = b * rows * cols;
                    for i in 0..rows {
                        for j in 0..cols {
                            dx[off + i * cols + j] = gd[off + j * rows + i];
                        }
                    }
                }
                accumulate(adj, *x, Tensor::new(shape, dx)?)?;
            }
            Op::Reshape(x) => {
                let dx = g.clone().reshape(self.shape(*x))?;
                accumulate(adj, *x, dx)?;
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let c = node.value.last_dim();
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks(c).zip(gd.chunks(c)).zip(dx.chunks_mut(c)) {
                    let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(adj, *x, Tensor::new(self.shape(*x).to_vec(), dx)?)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = node.value.last_dim();
                let gw = self.value(*gain).data();
                let n = T::lit(c as f64);
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); gd.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &gd[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut mean_d = T::zero();
                        let mut mean_dh = T::zero();
                        for j in 0..c {
                            let d = gr[j] * gw[j];
                            mean_d = mean_d + d;
                            mean_dh = mean_dh + d * hr[j];
                        }
                        mean_d = mean_d / n;
                        mean_dh = mean_dh / n;
                        for j in 0..c {
                            let d = gr[j] * gw[j];
                            dx[r * c + j] = rs * (d - mean_d - hr[j] * mean_dh);
                        }
                    }
                    accumulate(adj, *x, Tensor::new(self.shape(*x).to_vec(), dx)?)?;
                }
                if self.wants(*gain) {
                    let mut dg = vec![T::zero(); c];
                    for (j, (&gv, &h)) in gd.iter().zip(xhat).enumerate() {
                        dg[j % c] = dg[j % c] + gv * h;
                    }
                    accumulate(adj, *gain, Tensor::new(vec![c], dg)?)?;
                }
                if self.wants(*bias) {
                    let mut db = vec![T::zero(); c];
                    for (j, &gv) in gd.iter().enumerate() {
                        db[j % c] = db[j % c] + gv;
                    }
                    accumulate(adj, *bias, Tensor::new(vec![c], db)?)?;
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let dx = xv.iter().zip(gd).map(|(&v, &d)| d * gelu_grad(v)).collect();
                accumulate(adj, *x, Tensor::new(self.shape(*x).to_vec(), dx)?)?;
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx = xv
                    .iter()
                    .zip(gd)
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                accumulate(adj, *x, Tensor::new(self.shape(*x).to_vec(), dx)?)?;
            }
            Op::Dropout { x, mask } => {
                let dx = gd.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                accumulate(adj, *x, Tensor::new(self.shape(*x).to_vec(), dx)?)?;
            }
            Op::Mean { x, axis } => {
                let shape = self.shape(*x).to_vec();
                let (outer, len, inner) = outer_inner(&shape, *axis);
                let inv = T::one() / T::lit(len as f64);
                let mut dx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            dx[(o * len + a) * inner + i] = gd[o * inner + i] * inv;
                        }
                    }
                }
                accumulate(adj, *x, Tensor::new(shape, dx)?)?;
            }
            Op::SumAll(x) => {
                accumulate(adj, *x, Tensor::filled(self.shape(*x), gd[0]))?;
            }
            Op::ConcatLast(parts) => {
                let total = node.value.last_dim();
                let rows = node.value.shape()[0];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(adj, p, Tensor::new(vec![rows, w], dp)?)?;
                    }
                    offset += w;
                }
            }
            Op::SliceLast { x, start } => {
                let s = self.shape(*x).to_vec();
                let w = node.value.last_dim();
                let mut dx = vec![T::zero(); s[0] * s[1]];
                for r in 0..s[0] {
                    dx[r * s[1] + start..r * s[1] + start + w].copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                accumulate(adj, *x, Tensor::new(s, dx)?)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.wants(p) {
                        let dp = gd[offset..offset + len].to_vec();
                        accumulate(adj, p, Tensor::new(self.shape(p).to_vec(), dp)?)?;
                    }
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                let s = self.shape(*x).to_vec();
                let c = s[1];
                let mut dx = vec![T::zero(); s[0] * c];
                dx[start * c..start * c + gd.len()].copy_from_slice(gd);
                accumulate(adj, *x, Tensor::new(s, dx)?)?;
            }
            Op::CrossEntropy { logits, label, probs } => {
                let mut dz: Vec<T> = probs.iter().map(|&p| p * gd[0]).collect();
                dz[*label] = dz[*label] - gd[0];
                accumulate(adj, *logits, Tensor::new(self.shape(*logits).to_vec(), dz)?)?;
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(adj: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

const GELU_C: f64 = 0.044_715;

fn gelu_value<T: Real>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = k * (x + T::lit(GELU_C) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = k * (x + T::lit(GELU_C) * x * x * x);
    let t = inner.tanh();
    let dinner = k * (T::one() + T::lit(3.0 * GELU_C) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * dinner
}
