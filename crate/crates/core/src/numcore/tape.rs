//! Reverse-mode differentiation over a recorded op list.

use std::cell::RefCell;

use rand::Rng;

use super::fused::{attention_backward, attention_forward, AttnDims};
use super::{NumError, Tensor};
use crate::scalar::Scalar;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Linear(usize, usize, usize),
    Attention {
        q: usize,
        k: usize,
        v: usize,
        dims: AttnDims,
        probs: Vec<T>,
        mask: Option<Vec<T>>,
    },
    BatchMatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softmax {
        input: usize,
        axis: usize,
    },
    LayerNorm {
        input: usize,
        axis: usize,
        inv_std: Vec<T>,
    },
    Dropout {
        input: usize,
        mask: Vec<T>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Permute {
        input: usize,
        axes: Vec<usize>,
    },
    Reshape(usize),
    Sum {
        input: usize,
        axis: usize,
    },
    Mean {
        input: usize,
        axis: usize,
    },
    SumAll(usize),
    MeanAll(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive ops. Node ids are assigned in creation order,
/// so the list is topologically sorted by construction.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var<'_, T>) -> Tensor<T> {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }
}

/// `(outer, len, inner)` decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() || axes.is_empty() {
        out.extend_from_slice(data);
        return (out_shape, out);
    }
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    // trailing axes left in place are copied as contiguous runs
    let mut keep = 0;
    while keep < axes.len() && axes[axes.len() - 1 - keep] == axes.len() - 1 - keep {
        keep += 1;
    }
    let (dims, run, last_len, last_stride) = if keep > 0 {
        let run: usize = out_shape[axes.len() - keep..].iter().product();
        (axes.len() - keep, run, 1, 0)
    } else {
        let d = axes.len() - 1;
        (d, 1, out_shape[d], src_strides[d])
    };
    let mut idx = vec![0usize; dims];
    let mut offset = 0usize;
    let blocks = data.len() / (run * last_len);
    for _ in 0..blocks {
        if keep > 0 {
            out.extend_from_slice(&data[offset..offset + run]);
        } else {
            out.extend((0..last_len).map(|t| data[offset + t * last_stride]));
        }
        for d in (0..dims).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

/// Below this many multiply-adds packing costs more than it saves.
const SMALL_GEMM: usize = 4096;

/// `c += a · b` for row-major `a: m×k`, `b: k×n`, with optional transposes
/// of the stored operands.
#[allow(clippy::too_many_arguments)]
fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, c: &mut [T]) {
    if m == 0 || n == 0 {
        return;
    }
    if m * k * n <= SMALL_GEMM {
        let at = |i: usize, p: usize| if a_t { a[p * m + i] } else { a[i * k + p] };
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = at(i, p);
                if b_t {
                    for (j, cv) in row.iter_mut().enumerate() {
                        *cv += aip * b[j * k + p];
                    }
                } else {
                    for (cv, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                        *cv += aip * bv;
                    }
                }
            }
        }
        return;
    }
    // stored a is m×k (or k×m when transposed), stored b is k×n (or n×k)
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            T::one(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(
        &self,
        op_name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[usize],
    ) -> Result<Var<'_, T>, NumError> {
        if !value.all_finite() {
            return Err(NumError::NonFinite(op_name));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    pub fn value(&self, v: Var<'_, T>) -> Tensor<T> {
        self.nodes.borrow()[v.id].value.clone()
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>, NumError> {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.len() != 1 {
            return Err(NumError::NotScalar(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(loss_node.value.shape(), T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let mut acc = |target: usize, contrib: Tensor<T>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let k = bv.shape()[0];
                    let n = bv.shape()[1];
                    let m = av.len() / k;
                    if nodes[*a].requires_grad {
                        let mut da = Tensor::zeros(av.shape());
                        gemm_acc(m, n, k, g.data(), false, bv.data(), true, da.data_mut());
                        acc(*a, da);
                    }
                    if nodes[*b].requires_grad {
                        let mut db = Tensor::zeros(bv.shape());
                        gemm_acc(k, m, n, av.data(), true, g.data(), false, db.data_mut());
                        acc(*b, db);
                    }
                }
                Op::Linear(x, w, b) => {
                    let xv = &nodes[*x].value;
                    let wv = &nodes[*w].value;
                    let (k, n) = (wv.shape()[0], wv.shape()[1]);
                    let m = xv.len() / k.max(1);
                    if nodes[*x].requires_grad {
                        let mut dx = Tensor::zeros(xv.shape());
                        gemm_acc(m, n, k, g.data(), false, wv.data(), true, dx.data_mut());
                        acc(*x, dx);
                    }
                    if nodes[*w].requires_grad {
                        let mut dw = Tensor::zeros(wv.shape());
                        gemm_acc(k, m, n, xv.data(), true, g.data(), false, dw.data_mut());
                        acc(*w, dw);
                    }
                    if nodes[*b].requires_grad && n > 0 {
                        let mut db: Tensor<T> = Tensor::zeros(&[n]);
                        for row in g.data().chunks_exact(n) {
                            db.data_mut().iter_mut().zip(row).for_each(|(d, &gv)| *d += gv);
                        }
                        acc(*b, db);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    dims,
                    probs,
                    mask,
                } => {
                    let (dq, dk, dv) = attention_backward(
                        *dims,
                        nodes[*q].value.data(),
                        nodes[*k].value.data(),
                        nodes[*v].value.data(),
                        probs,
                        mask.as_deref(),
                        g.data(),
                    );
                    let shape = y.shape().to_vec();
                    acc(*q, Tensor::new(shape.clone(), dq)?);
                    acc(*k, Tensor::new(shape.clone(), dk)?);
                    acc(*v, Tensor::new(shape, dv)?);
                }
                Op::BatchMatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                    let n = bv.shape()[2];
                    if nodes[*a].requires_grad {
                        let mut da = Tensor::zeros(av.shape());
                        for i in 0..batch {
                            gemm_acc(
                                m,
                                n,
                                k,
                                &g.data()[i * m * n..(i + 1) * m * n],
                                false,
                                &bv.data()[i * k * n..(i + 1) * k * n],
                                true,
                                &mut da.data_mut()[i * m * k..(i + 1) * m * k],
                            );
                        }
                        acc(*a, da);
                    }
                    if nodes[*b].requires_grad {
                        let mut db = Tensor::zeros(bv.shape());
                        for i in 0..batch {
                            gemm_acc(
                                k,
                                m,
                                n,
                                &av.data()[i * m * k..(i + 1) * m * k],
                                true,
                                &g.data()[i * m * n..(i + 1) * m * n],
                                false,
                                &mut db.data_mut()[i * k * n..(i + 1) * k * n],
                            );
                        }
                        acc(*b, db);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let negate = matches!(node.op, Op::Sub(..));
                    let blen = nodes[*b].value.len();
                    if nodes[*b].requires_grad && blen > 0 {
                        let mut db: Tensor<T> = Tensor::zeros(nodes[*b].value.shape());
                        for chunk in g.data().chunks_exact(blen) {
                            db.data_mut().iter_mut().zip(chunk).for_each(|(d, &gv)| *d += gv);
                        }
                        if negate {
                            db.data_mut().iter_mut().for_each(|v| *v = -*v);
                        }
                        acc(*b, db);
                    }
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let blen = bv.len();
                    if blen == 0 {
                        continue;
                    }
                    if nodes[*a].requires_grad {
                        let mut data = Vec::with_capacity(g.len());
                        for chunk in g.data().chunks_exact(blen) {
                            data.extend(chunk.iter().zip(bv.data()).map(|(&gv, &b)| gv * b));
                        }
                        acc(*a, Tensor::new(av.shape().to_vec(), data)?);
                    }
                    if nodes[*b].requires_grad {
                        let mut db = Tensor::zeros(bv.shape());
                        for (gc, ac) in g.data().chunks_exact(blen).zip(av.data().chunks_exact(blen)) {
                            for ((d, &gv), &a) in db.data_mut().iter_mut().zip(gc).zip(ac) {
                                *d += gv * a;
                            }
                        }
                        acc(*b, db);
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(*a, g.map(|v| v * c));
                }
                Op::AddScalar(a) => acc(*a, g),
                Op::Sigmoid(a) => {
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &s)| gv * s * (T::one() - s))
                        .collect();
                    acc(*a, Tensor::new(y.shape().to_vec(), data)?);
                }
                Op::Tanh(a) => {
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &t)| gv * (T::one() - t * t))
                        .collect();
                    acc(*a, Tensor::new(y.shape().to_vec(), data)?);
                }
                Op::Relu(a) => {
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&gv, &r)| if r > T::zero() { gv } else { T::zero() })
                        .collect();
                    acc(*a, Tensor::new(y.shape().to_vec(), data)?);
                }
                Op::Softmax { input, axis } => {
                    let (outer, len, inner) = split_axis(y.shape(), *axis);
                    let mut dx = Tensor::zeros(y.shape());
                    let (gd, yd, dd) = (g.data(), y.data(), dx.data_mut());
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot: T = (0..len).map(|j| gd[base + j * inner] * yd[base + j * inner]).sum();
                            for j in 0..len {
                                let at = base + j * inner;
                                dd[at] = yd[at] * (gd[at] - dot);
                            }
                        }
                    }
                    acc(*input, dx);
                }
                Op::LayerNorm { input, axis, inv_std } => {
                    let (outer, len, inner) = split_axis(y.shape(), *axis);
                    let nl = T::from_usize_lossy(len);
                    let mut dx = Tensor::zeros(y.shape());
                    let (gd, yd, dd) = (g.data(), y.data(), dx.data_mut());
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let s = inv_std[o * inner + i];
                            let (mut sg, mut sgy) = (T::zero(), T::zero());
                            for j in 0..len {
                                let at = base + j * inner;
                                sg += gd[at];
                                sgy += gd[at] * yd[at];
                            }
                            let (mean_g, mean_gy) = (sg / nl, sgy / nl);
                            for j in 0..len {
                                let at = base + j * inner;
                                dd[at] = s * (gd[at] - mean_g - yd[at] * mean_gy);
                            }
                        }
                    }
                    acc(*input, dx);
                }
                Op::Dropout { input, mask } => {
                    let data = g.data().iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                    acc(*input, Tensor::new(y.shape().to_vec(), data)?);
                }
                Op::Concat { inputs, axis } => {
                    let (outer, total, inner) = split_axis(y.shape(), *axis);
                    let mut offset = 0;
                    for &inp in inputs {
                        let shape = nodes[inp].value.shape().to_vec();
                        let len = shape[*axis];
                        if nodes[inp].requires_grad {
                            let mut d = Vec::with_capacity(outer * len * inner);
                            for o in 0..outer {
                                let base = o * total * inner + offset * inner;
                                d.extend_from_slice(&g.data()[base..base + len * inner]);
                            }
                            acc(inp, Tensor::new(shape, d)?);
                        }
                        offset += len;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let in_shape = nodes[*input].value.shape().to_vec();
                    let (outer, total, inner) = split_axis(&in_shape, *axis);
                    let len = y.shape()[*axis];
                    let mut dx = Tensor::zeros(&in_shape);
                    for o in 0..outer {
                        let dst = o * total * inner + start * inner;
                        let src = o * len * inner;
                        dx.data_mut()[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    acc(*input, dx);
                }
                Op::Permute { input, axes } => {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inverse[a] = i;
                    }
                    let (shape, data) = permute_data(g.data(), g.shape(), &inverse);
                    acc(*input, Tensor::new(shape, data)?);
                }
                Op::Reshape(a) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    acc(*a, g.reshaped(&shape)?);
                }
                Op::Sum { input, axis } | Op::Mean { input, axis } => {
                    let in_shape = nodes[*input].value.shape().to_vec();
                    let (outer, len, inner) = split_axis(&in_shape, *axis);
                    let scale = if matches!(node.op, Op::Mean { .. }) {
                        T::one() / T::from_usize_lossy(len)
                    } else {
                        T::one()
                    };
                    let mut dx = Tensor::zeros(&in_shape);
                    for o in 0..outer {
                        let src = &g.data()[o * inner..(o + 1) * inner];
                        for j in 0..len {
                            let dst = &mut dx.data_mut()[o * len * inner + j * inner..][..inner];
                            dst.iter_mut().zip(src).for_each(|(d, &v)| *d = v * scale);
                        }
                    }
                    acc(*input, dx);
                }
                Op::SumAll(a) | Op::MeanAll(a) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    let n = nodes[*a].value.len();
                    let mut gv = g.data()[0];
                    if matches!(node.op, Op::MeanAll(_)) {
                        gv /= T::from_usize_lossy(n);
                    }
                    acc(*a, Tensor::full(&shape, gv));
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value(*self)
    }

    /// Borrow the recorded value for the duration of `f`.
    fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        let nodes = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    fn check_same_tape(&self, other: &Var<'t, T>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars belong to different tapes");
    }

    /// `[.., k] × [k, n] → [.., n]`; leading axes of `self` act as rows.
    pub fn matmul(&self, rhs: &Var<'t, T>) -> Result<Var<'t, T>, NumError> {
        self.check_same_tape(rhs);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            if a.shape().is_empty() || b.shape().len() != 2 || a.shape()[a.shape().len() - 1] != b.shape()[0] {
                return Err(NumError::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let k = b.shape()[0];
            let n = b.shape()[1];
            let m = a.len() / k.max(1);
            let mut out_shape = a.shape().to_vec();
            *out_shape.last_mut().unwrap() = n;
            let mut out = Tensor::zeros(&out_shape);
            gemm_acc(m, k, n, a.data(), false, b.data(), false, out.data_mut());
            out
        };
        self.tape
            .push("matmul", value, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id])
    }

    /// `self · w + b` with `w: [k, n]` and `b: [n]`; leading axes act as rows.
    pub fn linear(&self, w: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>, NumError> {
        self.check_same_tape(w);
        self.check_same_tape(b);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, wv, bv) = (&nodes[self.id].value, &nodes[w.id].value, &nodes[b.id].value);
            let ok = !x.shape().is_empty()
                && wv.shape().len() == 2
                && x.shape()[x.shape().len() - 1] == wv.shape()[0]
                && bv.shape() == [wv.shape()[1]];
            if !ok {
                return Err(NumError::ShapeMismatch {
                    op: "linear",
                    lhs: x.shape().to_vec(),
                    rhs: wv.shape().to_vec(),
                });
            }
            let (k, n) = (wv.shape()[0], wv.shape()[1]);
            let m = x.len() / k.max(1);
            let mut data = Vec::with_capacity(m * n);
            for _ in 0..m {
                data.extend_from_slice(bv.data());
            }
            gemm_acc(m, k, n, x.data(), false, wv.data(), false, &mut data);
            let mut out_shape = x.shape().to_vec();
            *out_shape.last_mut().unwrap() = n;
            Tensor::new(out_shape, data)?
        };
        self.tape
            .push("linear", value, Op::Linear(self.id, w.id, b.id), &[self.id, w.id, b.id])
    }

    /// Multi-head scaled dot-product attention. `self`, `k` and `v` are
    /// `[B, L, D]` projections whose last axis holds `heads` consecutive
    /// blocks; returns the concatenated heads `[B, L, D]`. Inverted dropout
    /// with `rate` applies to the attention weights when `train` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn attention<R: Rng>(
        &self,
        k: &Var<'t, T>,
        v: &Var<'t, T>,
        heads: usize,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var<'t, T>, NumError> {
        self.check_same_tape(k);
        self.check_same_tape(v);
        if !(0.0..1.0).contains(&rate) {
            return Err(NumError::Invalid {
                op: "attention",
                msg: format!("dropout rate {} not in [0, 1)", rate),
            });
        }
        let shape = self.shape();
        if shape.len() != 3 || k.shape() != shape || v.shape() != shape {
            return Err(NumError::ShapeMismatch {
                op: "attention",
                lhs: shape,
                rhs: k.shape(),
            });
        }
        if heads == 0 || shape[2] % heads != 0 {
            return Err(NumError::Invalid {
                op: "attention",
                msg: format!("width {} not divisible by {} heads", shape[2], heads),
            });
        }
        let dims = AttnDims {
            batch: shape[0],
            len: shape[1],
            d: shape[2],
            heads,
        };
        let mask = (train && rate > 0.0).then(|| {
            let keep = T::lit(1.0 / (1.0 - rate));
            (0..dims.weights_len())
                .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
                .collect::<Vec<T>>()
        });
        let (out, probs) = {
            let nodes = self.tape.nodes.borrow();
            attention_forward(
                dims,
                nodes[self.id].value.data(),
                nodes[k.id].value.data(),
                nodes[v.id].value.data(),
                mask.as_deref(),
            )
        };
        self.tape.push(
            "attention",
            Tensor::new(shape, out)?,
            Op::Attention {
                q: self.id,
                k: k.id,
                v: v.id,
                dims,
                probs,
                mask,
            },
            &[self.id, k.id, v.id],
        )
    }

    /// `[b, m, k] × [b, k, n] → [b, m, n]`.
    pub fn bmm(&self, rhs: &Var<'t, T>) -> Result<Var<'t, T>, NumError> {
        self.check_same_tape(rhs);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[rhs.id].value;
            let ok = a.shape().len() == 3
                && b.shape().len() == 3
                && a.shape()[0] == b.shape()[0]
                && a.shape()[2] == b.shape()[1];
            if !ok {
                return Err(NumError::ShapeMismatch {
                    op: "bmm",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let n = b.shape()[2];
            let mut out = Tensor::zeros(&[batch, m, n]);
            for i in 0..batch {
                gemm_acc(
                    m,
                    k,
                    n,
                    &a.data()[i * m * k..(i + 1) * m * k],
                    false,
                    &b.data()[i * k * n..(i + 1) * k * n],
                    false,
                    &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                );
            }
            out
        };
        self.tape
            .push("bmm", value, Op::BatchMatMul(self.id, rhs.id), &[self.id, rhs.id])
    }

    fn broadcast_binary(
        &self,
        rhs: &Var<'t, T>,
        name: &'static str,
        allow_broadcast: bool,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, NumError> {
        self.check_same_tape(rhs);
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id].value;
        let b = &nodes[rhs.id].value;
        let sa = a.shape();
        let sb = b.shape();
        let compatible = if allow_broadcast {
            sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb
        } else {
            sa == sb
        };
        if !compatible {
            return Err(NumError::ShapeMismatch {
                op: name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let mut data = Vec::with_capacity(a.len());
        if !b.is_empty() {
            for chunk in a.data().chunks_exact(b.len()) {
                data.extend(chunk.iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
            }
        }
        Tensor::new(sa.to_vec(), data)
    }

    /// Elementwise sum; `rhs` may match a trailing block of `self`'s shape.
    pub fn add(&self, rhs: &Var<'t, T>) -> Result<Var<'t, T>, NumError> {
        let v = self.broadcast_binary(rhs, "add", true, |a, b| a + b)?;
        self.tape.push("add", v, Op::Add(self.id, rhs.id), &[self.id, rhs.id])
    }

    pub fn sub(&self, rhs: &Var<'t, T>) -> Result<Var<'t, T>, NumError> {
        let v = self.broadcast_binary(rhs, "sub", true, |a, b| a - b)?;
        self.tape.push("sub", v, Op::Sub(self.id, rhs.id), &[self.id, rhs.id])
    }

    /// Elementwise product; `rhs` may match a trailing block of `self`'s shape.
    pub fn mul(&self, rhs: &Var<'t, T>) -> Result<Var<'t, T>, NumError> {
        let v = self.broadcast_binary(rhs, "mul", true, |a, b| a * b)?;
        self.tape.push("mul", v, Op::Mul(self.id, rhs.id), &[self.id, rhs.id])
    }

    pub fn scale(&self, c: T) -> Result<Var<'t, T>, NumError> {
        let v = self.with_value(|t| t.map(|x| x * c));
        self.tape.push("scale", v, Op::Scale(self.id, c), &[self.id])
    }

    pub fn add_scalar(&self, c: T) -> Result<Var<'t, T>, NumError> {
        let v = self.with_value(|t| t.map(|x| x + c));
        self.tape.push("add_scalar", v, Op::AddScalar(self.id), &[self.id])
    }

    /// `1 − x`.
    pub fn one_minus(&self) -> Result<Var<'t, T>, NumError> {
        self.scale(-T::one())?.add_scalar(T::one())
    }

    pub fn sigmoid(&self) -> Result<Var<'t, T>, NumError> {
        let v = self.with_value(|t| t.map(sigmoid));
        self.tape.push("sigmoid", v, Op::Sigmoid(self.id), &[self.id])
    }

    pub fn tanh(&self) -> Result<Var<'t, T>, NumError> {
        let v = self.with_value(|t| t.map(|x| x.tanh()));
        self.tape.push("tanh", v, Op::Tanh(self.id), &[self.id])
    }

    pub fn relu(&self) -> Result<Var<'t, T>, NumError> {
        let v = self.with_value(|t| t.map(|x| if x > T::zero() { x } else { T::zero() }));
        self.tape.push("relu", v, Op::Relu(self.id), &[self.id])
    }

    fn check_axis(&self, axis: usize, op: &'static str) -> Result<Vec<usize>, NumError> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(NumError::Invalid {
                op,
                msg: format!("axis {} out of range for shape {:?}", axis, shape),
            });
        }
        Ok(shape)
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>, NumError> {
        let shape = self.check_axis(axis, "softmax")?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let out = self.with_value(|x| {
            let mut out = Tensor::zeros(&shape);
            let (x, y) = (x.data(), out.data_mut());
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let max = (0..len)
                        .map(|j| x[base + j * inner])
                        .fold(T::neg_infinity(), |m, v| m.max(v));
                    let mut total = T::zero();
                    for j in 0..len {
                        let e = (x[base + j * inner] - max).exp();
                        y[base + j * inner] = e;
                        total += e;
                    }
                    let inv = T::one() / total;
                    for j in 0..len {
                        y[base + j * inner] *= inv;
                    }
                }
            }
            out
        });
        self.tape
            .push("softmax", out, Op::Softmax { input: self.id, axis }, &[self.id])
    }

    /// Normalise to zero mean, unit population variance along `axis` (no affine).
    pub fn layer_norm(&self, axis: usize, eps: T) -> Result<Var<'t, T>, NumError> {
        let shape = self.check_axis(axis, "layer_norm")?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let nl = T::from_usize_lossy(len);
        let (out, inv_std) = self.with_value(|x| {
            let mut out = Tensor::zeros(&shape);
            let mut inv_std = Vec::with_capacity(outer * inner);
            let (x, y) = (x.data(), out.data_mut());
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mean = (0..len).map(|j| x[base + j * inner]).sum::<T>() / nl;
                    let var = (0..len)
                        .map(|j| {
                            let d = x[base + j * inner] - mean;
                            d * d
                        })
                        .sum::<T>()
                        / nl;
                    let s = T::one() / (var + eps).sqrt();
                    inv_std.push(s);
                    for j in 0..len {
                        y[base + j * inner] = (x[base + j * inner] - mean) * s;
                    }
                }
            }
            (out, inv_std)
        });
        self.tape.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                input: self.id,
                axis,
                inv_std,
            },
            &[self.id],
        )
    }

    /// Inverted dropout. Identity when `train` is false or `rate` is zero.
    pub fn dropout<R: Rng>(&self, rate: f64, train: bool, rng: &mut R) -> Result<Var<'t, T>, NumError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumError::Invalid {
                op: "dropout",
                msg: format!("rate {} not in [0, 1)", rate),
            });
        }
        if !train || rate == 0.0 {
            return Ok(*self);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let (mask, out) = self.with_value(|x| {
            let mask: Vec<T> = (0..x.len())
                .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
                .collect();
            let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (mask, Tensor::new(x.shape().to_vec(), data))
        });
        let out = out?;
        self.tape
            .push("dropout", out, Op::Dropout { input: self.id, mask }, &[self.id])
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>, NumError> {
        let first = parts.first().ok_or(NumError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let base = nodes[first.id].value.shape().to_vec();
            if axis >= base.len() {
                return Err(NumError::Invalid {
                    op: "concat",
                    msg: format!("axis {} out of range for shape {:?}", axis, base),
                });
            }
            let mut total = 0;
            for p in parts {
                first.check_same_tape(p);
                let s = nodes[p.id].value.shape();
                let same_rest =
                    s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
                if !same_rest {
                    return Err(NumError::ShapeMismatch {
                        op: "concat",
                        lhs: base.clone(),
                        rhs: s.to_vec(),
                    });
                }
                total += s[axis];
            }
            let mut out_shape = base.clone();
            out_shape[axis] = total;
            let (outer, _, inner) = split_axis(&out_shape, axis);
            let mut data = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for p in parts {
                    let v = &nodes[p.id].value;
                    let len = v.shape()[axis];
                    let start = o * len * inner;
                    data.extend_from_slice(&v.data()[start..start + len * inner]);
                }
            }
            Tensor::new(out_shape, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.push(
            "concat",
            value,
            Op::Concat {
                inputs: ids.clone(),
                axis,
            },
            &ids,
        )
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>, NumError> {
        let shape = self.check_axis(axis, "slice")?;
        if start + len > shape[axis] {
            return Err(NumError::Invalid {
                op: "slice",
                msg: format!("range {}..{} exceeds axis length {}", start, start + len, shape[axis]),
            });
        }
        let (outer, total, inner) = split_axis(&shape, axis);
        let data = self.with_value(|x| {
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * total * inner + start * inner;
                data.extend_from_slice(&x.data()[base..base + len * inner]);
            }
            data
        });
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        self.tape.push(
            "slice",
            out,
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
            &[self.id],
        )
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t, T>, NumError> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes
                .iter()
                .all(|&a| a < shape.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(NumError::Invalid {
                op: "permute",
                msg: format!("axes {:?} invalid for shape {:?}", axes, shape),
            });
        }
        let (out_shape, data) = self.with_value(|x| permute_data(x.data(), &shape, axes));
        let out = Tensor::new(out_shape, data)?;
        self.tape.push(
            "permute",
            out,
            Op::Permute {
                input: self.id,
                axes: axes.to_vec(),
            },
            &[self.id],
        )
    }

    /// Swap the last two axes.
    pub fn transpose(&self) -> Result<Var<'t, T>, NumError> {
        let n = self.shape().len();
        if n < 2 {
            return Err(NumError::Invalid {
                op: "transpose",
                msg: "needs at least two axes".into(),
            });
        }
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 2, n - 1);
        self.permute(&axes)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>, NumError> {
        let out = self.value().reshaped(shape)?;
        self.tape.push("reshape", out, Op::Reshape(self.id), &[self.id])
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Var<'t, T>, NumError> {
        let name = if mean { "mean" } else { "sum" };
        let shape = self.check_axis(axis, name)?;
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut data = vec![T::zero(); outer * inner];
        self.with_value(|x| {
            for (o, dst) in data.chunks_exact_mut(inner.max(1)).enumerate().take(outer) {
                for j in 0..len {
                    let src = &x.data()[o * len * inner + j * inner..][..inner];
                    dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                }
            }
        });
        if mean {
            let nl = T::from_usize_lossy(len);
            data.iter_mut().for_each(|v| *v /= nl);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let out = Tensor::new(out_shape, data)?;
        let op = if mean {
            Op::Mean { input: self.id, axis }
        } else {
            Op::Sum { input: self.id, axis }
        };
        self.tape.push(name, out, op, &[self.id])
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, T>, NumError> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t, T>, NumError> {
        self.reduce_axis(axis, true)
    }

    pub fn sum(&self) -> Result<Var<'t, T>, NumError> {
        let total: T = self.with_value(|x| x.data().iter().copied().sum());
        self.tape
            .push("sum", Tensor::scalar(total), Op::SumAll(self.id), &[self.id])
    }

    pub fn mean(&self) -> Result<Var<'t, T>, NumError> {
        let total: T = self.with_value(|x| x.data().iter().copied().sum::<T>() / T::from_usize_lossy(x.len().max(1)));
        self.tape
            .push("mean", Tensor::scalar(total), Op::MeanAll(self.id), &[self.id])
    }
}
