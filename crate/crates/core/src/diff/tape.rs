//! Recorded computation trace with reverse-mode gradients.
//!
//! Nodes are appended in execution order, so the node list is already a
//! topological order and backward is a single reverse sweep.

use crate::error::{Error, Result};

use super::params::{ParamId, ParamStore};
use super::real::{gemm, Real};
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    Concat { parts: Vec<Var> },
    Slice { a: Var, start: usize },
    SelectRow { a: Var, row: usize },
    Transpose { a: Var },
    Reshape { a: Var },
    Softmax { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Act { a: Var, kind: Activation },
    Conv1d { x: Var, w: Var, b: Var, kernel: usize, cols: Vec<T> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Mean { a: Var },
    Sum { a: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

const LN_EPS: f64 = 1e-6;

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<Option<Var>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    // tanh approximation
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let a = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let one = T::one();
    let three = T::from_f64_lossy(3.0);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let y = half * x * (one + th);
    let dy = half * (one + th) + half * x * (one - th * th) * c * (one + three * a * x * x);
    (y, dy)
}

impl<T: Real> Tape<T> {
    /// A tape that records everything needed for backward.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape for inference: parameters do not require gradients and no
    /// backward state is kept.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn rg(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = self.grad_enabled && inputs.iter().any(|&v| self.rg(v));
        let op = if rg { op } else { Op::Leaf };
        self.push(value, op, rg)
    }

    /// An input that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is reported by [`Gradients::get`].
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.push(value, Op::Leaf, rg)
    }

    /// Brings a parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if self.params.len() < store.len() {
            self.params.resize(store.len(), None);
        }
        if let Some(v) = self.params[id.0] {
            return v;
        }
        let value = store.get(id).value.clone();
        let rg = self.grad_enabled;
        let var = self.push(value, if rg { Op::Param(id) } else { Op::Leaf }, rg);
        self.params[id.0] = Some(var);
        var
    }

    /// `a [.., k] x b [k, n] -> [.., n]`; leading axes of `a` are rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (k, n) = (sb[0], sb[1]);
        let rows = self.value(a).rows();
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![T::zero(); rows * n];
        gemm(rows, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(value, Op::MatMul { a, b }, &[a, b]))
    }

    /// Batched product over matching leading axes:
    /// `a [.., m, k] x b [.., k, n]`, or `b [.., n, k]` transposed when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] {
            return Err(Error::shape("batch_matmul", &sa, &sb));
        }
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if k != kb {
            return Err(Error::shape("batch_matmul", &sa, &sb));
        }
        let groups: usize = sa[..r - 2].iter().product();
        let mut out = vec![T::zero(); groups * m * n];
        {
            let (va, vb) = (self.value(a).data(), self.value(b).data());
            for g in 0..groups {
                gemm(
                    m,
                    k,
                    n,
                    &va[g * m * k..(g + 1) * m * k],
                    false,
                    &vb[g * k * n..(g + 1) * k * n],
                    trans_b,
                    &mut out[g * m * n..(g + 1) * m * n],
                    false,
                );
            }
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(value, Op::BatchMatMul { a, b, trans_b }, &[a, b]))
    }

    /// `a + b` where the shape of `b` is a suffix of the shape of `a`; `b` is
    /// repeated over the remaining leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape("add", sa, sb));
        }
        let vb = self.value(b).data();
        let period = vb.len().max(1);
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + vb[i % period])
            .collect();
        let value = Tensor::new(sa, data)?;
        Ok(self.push_op(value, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("mul", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(sa, data)?;
        Ok(self.push_op(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let v = self.value(a);
        let value = Tensor::new(v.shape(), v.data().iter().map(|&x| x * factor).collect())
            .expect("same shape");
        self.push_op(value, Op::Scale { a, factor }, &[a])
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidConfig("concat of zero tensors".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Channels `start..start + len` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let width = *s.last().unwrap_or(&0);
        if s.is_empty() || start + len > width {
            return Err(Error::shape("slice", &s, &[start, start + len]));
        }
        let rows = self.value(a).rows();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * width + start..r * width + start + len]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(value, Op::Slice { a, start }, &[a]))
    }

    /// Row `row` of the second-to-last axis: `[.., n, d] -> [.., d]`.
    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let r = s.len();
        if r < 2 || row >= s[r - 2] {
            return Err(Error::shape("select_row", &s, &[row]));
        }
        let (n, d) = (s[r - 2], s[r - 1]);
        let groups: usize = s[..r - 2].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(groups * d);
        for g in 0..groups {
            let start = (g * n + row) * d;
            out.extend_from_slice(&src[start..start + d]);
        }
        let mut shape = s[..r - 2].to_vec();
        shape.push(d);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(value, Op::SelectRow { a, row }, &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let r = s.len();
        if r < 2 {
            return Err(Error::shape("transpose", &s, &[]));
        }
        let (m, n) = (s[r - 2], s[r - 1]);
        let groups: usize = s[..r - 2].iter().product();
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for g in 0..groups {
            let base = g * m * n;
            for i in 0..m {
                for j in 0..n {
                    out[base + j * m + i] = src[base + i * n + j];
                }
            }
        }
        let mut shape = s;
        shape.swap(r - 2, r - 1);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(value, Op::Transpose { a }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push_op(value, Op::Reshape { a }, &[a]))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let width = v.last_dim();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(width.max(1)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let value = Tensor::new(v.shape(), out).expect("same shape");
        self.push_op(value, Op::Softmax { a }, &[a])
    }

    /// Per-row normalization over the last axis followed by `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::shape("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let eps = T::from_f64_lossy(LN_EPS);
        let n = T::from_usize(d).unwrap();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let src = self.value(x).data();
        let rows = self.value(x).rows();
        let mut out = vec![T::zero(); src.len()];
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        let needs = self.grad_enabled && [x, gamma, beta].iter().any(|&v| self.rg(v));
        let (xhat, rstd) = if needs { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        Ok(self.push_op(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let v = self.value(a);
        let data = match kind {
            Activation::Relu => v.data().iter().map(|&x| x.max(T::zero())).collect(),
            Activation::Gelu => v.data().iter().map(|&x| gelu_parts(x).0).collect(),
        };
        let value = Tensor::new(v.shape(), data).expect("same shape");
        self.push_op(value, Op::Act { a, kind }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Gelu)
    }

    /// Same-length 1D convolution over the sequence axis of `x [B, L, C]`
    /// with `w [k, C, O]` (k odd), bias `b [O]`, zero padding `(k-1)/2`.
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sw[1] != sx[2] || sw[0] % 2 == 0 {
            return Err(Error::shape("conv1d_same", &sx, &sw));
        }
        let (batch, len, cin) = (sx[0], sx[1], sx[2]);
        let (kernel, cout) = (sw[0], sw[2]);
        if self.shape(b) != [cout] {
            return Err(Error::shape("conv1d_same", &sw, self.shape(b)));
        }
        let pad = (kernel - 1) / 2;
        let width = kernel * cin;
        let src = self.value(x).data();
        let mut cols = vec![T::zero(); batch * len * width];
        for bi in 0..batch {
            for t in 0..len {
                let row = &mut cols[(bi * len + t) * width..(bi * len + t + 1) * width];
                for j in 0..kernel {
                    let pos = t as isize + j as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < len {
                        let s = (bi * len + pos as usize) * cin;
                        row[j * cin..(j + 1) * cin].copy_from_slice(&src[s..s + cin]);
                    }
                }
            }
        }
        let rows = batch * len;
        let bias = self.value(b).data();
        let mut out: Vec<T> = (0..rows).flat_map(|_| bias.iter().copied()).collect();
        gemm(rows, width, cout, &cols, false, self.value(w).data(), false, &mut out, true);
        let value = Tensor::new(&[batch, len, cout], out)?;
        let needs = self.grad_enabled && self.rg(w);
        let cols = if needs { cols } else { Vec::new() };
        Ok(self.push_op(
            value,
            Op::Conv1d {
                x,
                w,
                b,
                kernel,
                cols,
            },
            &[x, w, b],
        ))
    }

    /// Mean negative log-likelihood of `labels` under `logits [B, C]`.
    pub fn cross_entropy_mean(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::shape("cross_entropy_mean", &s, &[labels.len()]));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::shape("cross_entropy_mean", &s, &[bad]));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = T::zero();
        for (row, &label) in probs.chunks_mut(classes).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            loss += sum.ln() - (row[label].ln());
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let n = T::from_usize(labels.len()).unwrap();
        let value = Tensor::scalar(loss / n);
        Ok(self.push_op(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::from_usize(v.numel().max(1)).unwrap();
        let value = Tensor::scalar(v.data().iter().copied().sum::<T>() / n);
        self.push_op(value, Op::Mean { a }, &[a])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().copied().sum());
        self.push_op(value, Op::Sum { a }, &[a])
    }

    /// Reverse sweep from `loss`. Parameter gradients are added to the
    /// accumulators in `store`; every node gradient is returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                let acc = store.get_mut(id).grad.data_mut();
                for (a, &v) in acc.iter_mut().zip(&g) {
                    *a += v;
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let zero = T::zero();
        // Lazily allocated accumulator for input `v`, None if it needs no grad.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].requires_grad {
                    let n = self.nodes[v.0].value.numel();
                    Some(grads[v.0].get_or_insert_with(|| vec![zero; n]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (k, n) = (vb.shape()[0], vb.shape()[1]);
                let rows = va.rows();
                if let Some(ga) = acc!(*a) {
                    gemm(rows, n, k, g, false, vb.data(), true, ga, true);
                }
                if let Some(gb) = acc!(*b) {
                    gemm(k, rows, n, va.data(), true, g, false, gb, true);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let r = va.shape().len();
                let (m, k) = (va.shape()[r - 2], va.shape()[r - 1]);
                let n = node.value.shape()[r - 1];
                let groups = va.numel() / (m * k).max(1);
                if let Some(ga) = acc!(*a) {
                    for gi in 0..groups {
                        let gs = &g[gi * m * n..(gi + 1) * m * n];
                        let bs = &vb.data()[gi * k * n..(gi + 1) * k * n];
                        // dA = dC * B^T, with B stored k x n or n x k
                        gemm(m, n, k, gs, false, bs, !*trans_b, &mut ga[gi * m * k..(gi + 1) * m * k], true);
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for gi in 0..groups {
                        let gs = &g[gi * m * n..(gi + 1) * m * n];
                        let as_ = &va.data()[gi * m * k..(gi + 1) * m * k];
                        let out = &mut gb[gi * k * n..(gi + 1) * k * n];
                        if *trans_b {
                            gemm(n, m, k, gs, true, as_, false, out, true);
                        } else {
                            gemm(k, m, n, as_, true, gs, false, out, true);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(gb) = acc!(*b) {
                    let period = gb.len().max(1);
                    for (i, &y) in g.iter().enumerate() {
                        gb[i % period] += y;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = acc!(*a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * vb[i];
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * va[i];
                    }
                }
            }
            Op::Scale { a, factor } => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *factor);
                }
            }
            Op::Concat { parts } => {
                let total = node.value.last_dim();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if let Some(gp) = acc!(p) {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, &y)| *x += y);
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { a, start } => {
                let width = self.value(*a).last_dim();
                let len = node.value.last_dim();
                let rows = node.value.rows();
                if let Some(ga) = acc!(*a) {
                    for r in 0..rows {
                        let dst = &mut ga[r * width + start..r * width + start + len];
                        dst.iter_mut()
                            .zip(&g[r * len..(r + 1) * len])
                            .for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::SelectRow { a, row } => {
                let s = self.shape(*a);
                let r = s.len();
                let (n, d) = (s[r - 2], s[r - 1]);
                if let Some(ga) = acc!(*a) {
                    for (gi, chunk) in g.chunks(d).enumerate() {
                        let start = (gi * n + row) * d;
                        ga[start..start + d]
                            .iter_mut()
                            .zip(chunk)
                            .for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Transpose { a } => {
                let s = self.shape(*a);
                let r = s.len();
                let (m, n) = (s[r - 2], s[r - 1]);
                if let Some(ga) = acc!(*a) {
                    let groups = ga.len() / (m * n).max(1);
                    for gi in 0..groups {
                        let base = gi * m * n;
                        for i in 0..m {
                            for j in 0..n {
                                ga[base + i * n + j] += g[base + j * m + i];
                            }
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::Softmax { a } => {
                let y = node.value.data();
                let width = node.value.last_dim().max(1);
                if let Some(ga) = acc!(*a) {
                    for ((gr, yr), gar) in g.chunks(width).zip(y.chunks(width)).zip(ga.chunks_mut(width)) {
                        let dot: T = gr.iter().zip(yr).map(|(&u, &v)| u * v).sum();
                        for j in 0..width {
                            gar[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = node.value.last_dim();
                let n = T::from_usize(d).unwrap();
                if let Some(gb) = acc!(*beta) {
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                    }
                }
                if let Some(gg) = acc!(*gamma) {
                    for (row, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += row[j] * hrow[j];
                        }
                    }
                }
                let gamma_v = self.value(*gamma).data();
                if let Some(gx) = acc!(*x) {
                    let mut gh = vec![zero; d];
                    for (r, (row, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            gh[j] = row[j] * gamma_v[j];
                        }
                        let mean_gh = gh.iter().copied().sum::<T>() / n;
                        let mean_ghh = gh.iter().zip(hrow).map(|(&u, &v)| u * v).sum::<T>() / n;
                        for j in 0..d {
                            gx[r * d + j] += rstd[r] * (gh[j] - mean_gh - hrow[j] * mean_ghh);
                        }
                    }
                }
            }
            Op::Act { a, kind } => {
                let va = self.value(*a).data();
                if let Some(ga) = acc!(*a) {
                    match kind {
                        Activation::Relu => {
                            for i in 0..g.len() {
                                if va[i] > zero {
                                    ga[i] += g[i];
                                }
                            }
                        }
                        Activation::Gelu => {
                            for i in 0..g.len() {
                                ga[i] += g[i] * gelu_parts(va[i]).1;
                            }
                        }
                    }
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                kernel,
                cols,
            } => {
                let sx = self.shape(*x);
                let (batch, len, cin) = (sx[0], sx[1], sx[2]);
                let cout = node.value.last_dim();
                let width = kernel * cin;
                let rows = batch * len;
                if let Some(gb) = acc!(*b) {
                    for row in g.chunks(cout) {
                        gb.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                    }
                }
                if let Some(gw) = acc!(*w) {
                    gemm(width, rows, cout, cols, true, g, false, gw, true);
                }
                if self.nodes[x.0].requires_grad {
                    let mut gcols = vec![zero; rows * width];
                    gemm(rows, cout, width, g, false, self.value(*w).data(), true, &mut gcols, false);
                    let pad = (kernel - 1) / 2;
                    let gx = acc!(*x).unwrap();
                    for bi in 0..batch {
                        for t in 0..len {
                            let row = &gcols[(bi * len + t) * width..(bi * len + t + 1) * width];
                            for j in 0..*kernel {
                                let pos = t as isize + j as isize - pad as isize;
                                if pos >= 0 && (pos as usize) < len {
                                    let s = (bi * len + pos as usize) * cin;
                                    gx[s..s + cin]
                                        .iter_mut()
                                        .zip(&row[j * cin..(j + 1) * cin])
                                        .for_each(|(x, &y)| *x += y);
                                }
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = self.value(*logits).last_dim();
                let scale = g[0] / T::from_usize(labels.len()).unwrap();
                if let Some(gl) = acc!(*logits) {
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { T::one() } else { zero };
                            gl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                }
            }
            Op::Mean { a } => {
                let n = T::from_usize(self.value(*a).numel().max(1)).unwrap();
                if let Some(ga) = acc!(*a) {
                    let v = g[0] / n;
                    ga.iter_mut().for_each(|x| *x += v);
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
        }
    }
}
