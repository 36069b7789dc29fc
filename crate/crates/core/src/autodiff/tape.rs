use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::dft;
use super::tensor::{matmul_into, Tensor};
use crate::error::{Error, Result};

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep. A tape is
/// single-use: [`Tape::backward`] consumes it.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    leaves: Vec<(String, usize)>,
    consumed: bool,
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

enum Op {
    Input,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRows(usize, usize),
    MulCols(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Square(usize),
    PowF(usize, f64),
    Sum(usize),
    SumRows(usize),
    SoftmaxRows(usize),
    LogSumExpRows(usize),
    Concat(Vec<usize>, usize),
    Slice { input: usize, axis: usize, start: usize },
    Reshape(usize),
    Conv1d { x: usize, w: usize, b: usize },
    /// Input and the gate sigmoids computed on the forward pass.
    Glu(usize, Vec<f64>),
    Rdft(usize),
    Irdft(usize),
    Mse(usize, usize),
    CrossEntropy(usize, Rc<[usize]>),
    SymEigvecs { input: usize, eigenvalues: Rc<[f64]> },
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.idx, self.shape())
    }
}

/// Gradients keyed by leaf identifier.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.map
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable leaf under `name`.
    pub fn leaf(&self, name: impl Into<String>, value: Tensor) -> Var<'_> {
        let var = self.push_node(value, Op::Input, true);
        self.inner.borrow_mut().leaves.push((name.into(), var.idx));
        var
    }

    /// Records a value that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Input, false)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            idx: inner.nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let requires_grad = {
            let inner = self.inner.borrow();
            inputs.iter().any(|&i| inner.nodes[i].requires_grad)
        };
        self.push_node(value, op, requires_grad)
    }

    fn value(&self, idx: usize) -> Rc<Tensor> {
        Rc::clone(&self.inner.borrow().nodes[idx].value)
    }

    /// Exact reverse-mode gradients of `loss` with respect to every leaf.
    ///
    /// Leaves that do not lie on a path to `loss` get an all-zero gradient.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::TapeConsumed);
        }
        inner.consumed = true;
        let nodes = &inner.nodes;
        let loss_value = &nodes[loss.idx].value;
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.idx] = Some(vec![1.0]);
        for idx in (0..=loss.idx).rev() {
            if !nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            backprop(nodes, idx, &g, &mut grads);
            if matches!(nodes[idx].op, Op::Input) {
                grads[idx] = Some(g);
            }
        }

        let map = inner
            .leaves
            .iter()
            .map(|(name, idx)| {
                let shape = nodes[*idx].value.shape().to_vec();
                let data = grads[*idx]
                    .take()
                    .unwrap_or_else(|| vec![0.0; nodes[*idx].value.len()]);
                (name.clone(), Tensor::from_parts(shape, data))
            })
            .collect();
        Ok(Gradients { map })
    }
}

fn slot<'g>(
    grads: &'g mut [Option<Vec<f64>>],
    nodes: &[Node],
    idx: usize,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    Some(grads[idx].get_or_insert_with(|| vec![0.0; nodes[idx].value.len()]))
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Output positions `lo..hi` whose input `l + kk - pad` lies inside `0..len`
/// for a same-padded convolution tap `kk`.
fn tap_range(kk: usize, pad: usize, len: usize) -> (usize, usize) {
    (pad.saturating_sub(kk), (len + pad).saturating_sub(kk).min(len))
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[allow(clippy::too_many_lines)]
fn backprop(nodes: &[Node], idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let out = val(idx);
    match &nodes[idx].op {
        Op::Input => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if let Some(ga) = slot(grads, nodes, *a) {
                // ga += g[m,n] * b^T
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bv.data()[p * n + j];
                        }
                        ga[i * k + p] += s;
                    }
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                // gb += a^T * g
                let at = av.transpose();
                matmul_into(at.data(), g, gb, k, m, n);
            }
        }
        Op::Transpose(a) => {
            let (m, n) = (out.rows(), out.cols());
            if let Some(ga) = slot(grads, nodes, *a) {
                for i in 0..m {
                    for j in 0..n {
                        ga[j * m + i] += g[i * n + j];
                    }
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                gb.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((x, &gi), &bi) in ga.iter_mut().zip(g).zip(bv.data()) {
                    *x += gi * bi;
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for ((x, &gi), &ai) in gb.iter_mut().zip(g).zip(av.data()) {
                    *x += gi * ai;
                }
            }
        }
        Op::AddRow(a, b) => {
            let n = val(*b).len();
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for chunk in g.chunks(n) {
                    gb.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y);
                }
            }
        }
        Op::MulRows(a, v) => {
            let (av, vv) = (val(*a), val(*v));
            let width = av.len() / vv.len();
            if let Some(ga) = slot(grads, nodes, *a) {
                for (r, (gr, chunk)) in ga.chunks_mut(width).zip(g.chunks(width)).enumerate() {
                    let s = vv.data()[r];
                    gr.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y * s);
                }
            }
            if let Some(gv) = slot(grads, nodes, *v) {
                for (r, (ar, chunk)) in av.data().chunks(width).zip(g.chunks(width)).enumerate() {
                    gv[r] += ar.iter().zip(chunk).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        Op::MulCols(a, v) => {
            let (av, vv) = (val(*a), val(*v));
            let n = vv.len();
            if let Some(ga) = slot(grads, nodes, *a) {
                for (gr, chunk) in ga.chunks_mut(n).zip(g.chunks(n)) {
                    for ((x, &y), &s) in gr.iter_mut().zip(chunk).zip(vv.data()) {
                        *x += y * s;
                    }
                }
            }
            if let Some(gv) = slot(grads, nodes, *v) {
                for (ar, chunk) in av.data().chunks(n).zip(g.chunks(n)) {
                    for ((x, &y), &a) in gv.iter_mut().zip(chunk).zip(ar) {
                        *x += y * a;
                    }
                }
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * c);
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((x, &y), &s) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * s * (1.0 - s);
                }
            }
        }
        Op::Tanh(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((x, &y), &t) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * (1.0 - t * t);
                }
            }
        }
        Op::Exp(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((x, &y), &e) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * e;
                }
            }
        }
        Op::Square(a) => {
            let av = val(*a);
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((x, &y), &v) in ga.iter_mut().zip(g).zip(av.data()) {
                    *x += 2.0 * y * v;
                }
            }
        }
        Op::PowF(a, p) => {
            let av = val(*a);
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((x, &y), &v) in ga.iter_mut().zip(g).zip(av.data()) {
                    *x += y * p * v.powf(p - 1.0);
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        }
        Op::SumRows(a) => {
            let n = last_dim(val(*a).shape());
            if let Some(ga) = slot(grads, nodes, *a) {
                for (gr, &y) in ga.chunks_mut(n).zip(g) {
                    gr.iter_mut().for_each(|x| *x += y);
                }
            }
        }
        Op::SoftmaxRows(a) => {
            let n = last_dim(out.shape());
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((gr, yr), gor) in ga.chunks_mut(n).zip(out.data().chunks(n)).zip(g.chunks(n))
                {
                    let dot: f64 = yr.iter().zip(gor).map(|(y, go)| y * go).sum();
                    for ((x, &y), &go) in gr.iter_mut().zip(yr).zip(gor) {
                        *x += y * (go - dot);
                    }
                }
            }
        }
        Op::LogSumExpRows(a) => {
            let av = val(*a);
            let n = last_dim(av.shape());
            if let Some(ga) = slot(grads, nodes, *a) {
                let mut p = vec![0.0; n];
                for ((gr, ar), &go) in ga.chunks_mut(n).zip(av.data().chunks(n)).zip(g) {
                    softmax_row(ar, &mut p);
                    gr.iter_mut().zip(&p).for_each(|(x, &pi)| *x += go * pi);
                }
            }
        }
        Op::Concat(inputs, axis) => {
            let (outer, _, inner) = split_axis(out.shape(), *axis);
            let total = out.shape()[*axis] * inner;
            let mut offset = 0;
            for &i in inputs {
                let extent = val(i).shape()[*axis] * inner;
                if let Some(gi) = slot(grads, nodes, i) {
                    for o in 0..outer {
                        let src = &g[o * total + offset..o * total + offset + extent];
                        gi[o * extent..(o + 1) * extent]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, &y)| *x += y);
                    }
                }
                offset += extent;
            }
        }
        Op::Slice { input, axis, start } => {
            let in_shape = val(*input).shape().to_vec();
            let (outer, full, inner) = split_axis(&in_shape, *axis);
            let extent = out.shape()[*axis] * inner;
            if let Some(gi) = slot(grads, nodes, *input) {
                for o in 0..outer {
                    let base = o * full * inner + start * inner;
                    gi[base..base + extent]
                        .iter_mut()
                        .zip(&g[o * extent..(o + 1) * extent])
                        .for_each(|(x, &y)| *x += y);
                }
            }
        }
        Op::Conv1d { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (batch, cin, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
            let (cout, k) = (wv.shape()[0], wv.shape()[2]);
            let pad = k / 2;
            if let Some(gb) = slot(grads, nodes, *b) {
                for bi in 0..batch {
                    for co in 0..cout {
                        let base = (bi * cout + co) * len;
                        gb[co] += g[base..base + len].iter().sum::<f64>();
                    }
                }
            }
            if let Some(gw) = slot(grads, nodes, *w) {
                for bi in 0..batch {
                    for co in 0..cout {
                        let grow = &g[(bi * cout + co) * len..(bi * cout + co + 1) * len];
                        for ci in 0..cin {
                            let xrow = &xv.data()[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                            for kk in 0..k {
                                let (lo, hi) = tap_range(kk, pad, len);
                                let src = &xrow[lo + kk - pad..hi + kk - pad];
                                gw[(co * cin + ci) * k + kk] +=
                                    grow[lo..hi].iter().zip(src).map(|(g, x)| g * x).sum::<f64>();
                            }
                        }
                    }
                }
            }
            if let Some(gx) = slot(grads, nodes, *x) {
                for bi in 0..batch {
                    for co in 0..cout {
                        let grow = &g[(bi * cout + co) * len..(bi * cout + co + 1) * len];
                        for ci in 0..cin {
                            let gxrow = &mut gx[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                            for kk in 0..k {
                                let wk = wv.data()[(co * cin + ci) * k + kk];
                                let (lo, hi) = tap_range(kk, pad, len);
                                let dst = &mut gxrow[lo + kk - pad..hi + kk - pad];
                                dst.iter_mut().zip(&grow[lo..hi]).for_each(|(d, g)| *d += g * wk);
                            }
                        }
                    }
                }
            }
        }
        Op::Glu(a, gates) => {
            let av = val(*a);
            let (batch, c2, len) = (av.shape()[0], av.shape()[1], av.shape()[2]);
            let c = c2 / 2;
            if let Some(ga) = slot(grads, nodes, *a) {
                for bi in 0..batch {
                    for ci in 0..c {
                        for l in 0..len {
                            let vi = (bi * c2 + ci) * len + l;
                            let gi = (bi * c2 + c + ci) * len + l;
                            let oi = (bi * c + ci) * len + l;
                            let (s, go) = (gates[oi], g[oi]);
                            ga[vi] += go * s;
                            ga[gi] += go * av.data()[vi] * s * (1.0 - s);
                        }
                    }
                }
            }
        }
        Op::Rdft(a) => {
            let len = last_dim(val(*a).shape());
            let basis = dft::basis(len);
            let bins = basis.bins();
            if let Some(ga) = slot(grads, nodes, *a) {
                for (gr, go) in ga.chunks_mut(len).zip(g.chunks(2 * bins)) {
                    basis.forward_adjoint(&go[..bins], &go[bins..], gr);
                }
            }
        }
        Op::Irdft(a) => {
            let len = last_dim(out.shape());
            let basis = dft::basis(len);
            let bins = basis.bins();
            if let Some(ga) = slot(grads, nodes, *a) {
                for (gr, go) in ga.chunks_mut(2 * bins).zip(g.chunks(len)) {
                    let (re, im) = gr.split_at_mut(bins);
                    basis.inverse_adjoint(go, re, im);
                }
            }
        }
        Op::Mse(p, t) => {
            let (pv, tv) = (val(*p), val(*t));
            let scale = 2.0 * g[0] / pv.len() as f64;
            let diff: Vec<f64> = pv.data().iter().zip(tv.data()).map(|(a, b)| a - b).collect();
            if let Some(gp) = slot(grads, nodes, *p) {
                gp.iter_mut().zip(&diff).for_each(|(x, d)| *x += scale * d);
            }
            if let Some(gt) = slot(grads, nodes, *t) {
                gt.iter_mut().zip(&diff).for_each(|(x, d)| *x -= scale * d);
            }
        }
        Op::CrossEntropy(a, labels) => {
            let av = val(*a);
            let c = last_dim(av.shape());
            let rows = labels.len();
            if let Some(ga) = slot(grads, nodes, *a) {
                let mut p = vec![0.0; c];
                for (r, (gr, ar)) in ga.chunks_mut(c).zip(av.data().chunks(c)).enumerate() {
                    softmax_row(ar, &mut p);
                    p[labels[r]] -= 1.0;
                    gr.iter_mut()
                        .zip(&p)
                        .for_each(|(x, &pi)| *x += g[0] * pi / rows as f64);
                }
            }
        }
        Op::SymEigvecs { input, eigenvalues } => {
            let n = eigenvalues.len();
            let u = out;
            if let Some(ga) = slot(grads, nodes, *input) {
                // A_bar = U (F o U^T U_bar) U^T with F_ij = 1 / (l_j - l_i).
                let ut = u.transpose();
                let mut m = vec![0.0; n * n];
                matmul_into(ut.data(), g, &mut m, n, n, n);
                let spread = eigenvalues
                    .iter()
                    .fold(0.0_f64, |acc, l| acc.max(l.abs()))
                    .max(1.0);
                for i in 0..n {
                    for j in 0..n {
                        let gap = eigenvalues[j] - eigenvalues[i];
                        m[i * n + j] = if i == j || gap.abs() <= 1e-12 * spread {
                            0.0
                        } else {
                            m[i * n + j] / gap
                        };
                    }
                }
                let mut tmp = vec![0.0; n * n];
                matmul_into(u.data(), &m, &mut tmp, n, n, n);
                let mut abar = vec![0.0; n * n];
                matmul_into(&tmp, ut.data(), &mut abar, n, n, n);
                for i in 0..n {
                    for j in 0..n {
                        ga[i * n + j] += 0.5 * (abar[i * n + j] + abar[j * n + i]);
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.idx)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, &[self.idx])
    }

    fn same_shape(&self, other: &Var<'t>, op: &'static str) -> Result<(Rc<Tensor>, Rc<Tensor>)> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        Ok((a, b))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let value = self.value().matmul(&other.value())?;
        Ok(self
            .tape
            .push(value, Op::MatMul(self.idx, other.idx), &[self.idx, other.idx]))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let v = self.value();
        if v.shape().len() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", v.shape())));
        }
        Ok(self.unary(v.transpose(), Op::Transpose(self.idx)))
    }

    fn zip_with(
        &self,
        other: &Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (a, b) = self.same_shape(other, name)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self.tape.push(value, op, &[self.idx, other.idx]))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_with(other, "add", Op::Add(self.idx, other.idx), |x, y| x + y)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_with(other, "sub", Op::Sub(self.idx, other.idx), |x, y| x - y)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.zip_with(other, "mul", Op::Mul(self.idx, other.idx), |x, y| x * y)
    }

    /// Adds a vector along the last axis (bias broadcast).
    pub fn add_row(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), bias.value());
        if b.shape().len() != 1 || last_dim(a.shape()) != b.len() {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", a.shape(), b.shape())));
        }
        let mut data = a.data().to_vec();
        for chunk in data.chunks_mut(b.len()) {
            chunk.iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
        }
        let value = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self
            .tape
            .push(value, Op::AddRow(self.idx, bias.idx), &[self.idx, bias.idx]))
    }

    /// Scales the `i`-th leading slice by `v[i]`.
    pub fn mul_rows(&self, v: &Var<'t>) -> Result<Var<'t>> {
        let (a, s) = (self.value(), v.value());
        if s.shape().len() != 1 || a.shape().first() != Some(&s.len()) {
            return Err(Error::shape("mul_rows", format!("{:?} * {:?}", a.shape(), s.shape())));
        }
        let width = a.len() / s.len();
        let mut data = a.data().to_vec();
        for (chunk, &k) in data.chunks_mut(width).zip(s.data()) {
            chunk.iter_mut().for_each(|x| *x *= k);
        }
        let value = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self
            .tape
            .push(value, Op::MulRows(self.idx, v.idx), &[self.idx, v.idx]))
    }

    /// Scales every column `j` of the last axis by `v[j]`.
    pub fn mul_cols(&self, v: &Var<'t>) -> Result<Var<'t>> {
        let (a, s) = (self.value(), v.value());
        if s.shape().len() != 1 || last_dim(a.shape()) != s.len() {
            return Err(Error::shape("mul_cols", format!("{:?} * {:?}", a.shape(), s.shape())));
        }
        let mut data = a.data().to_vec();
        for chunk in data.chunks_mut(s.len()) {
            chunk.iter_mut().zip(s.data()).for_each(|(x, &k)| *x *= k);
        }
        let value = Tensor::from_parts(a.shape().to_vec(), data);
        Ok(self
            .tape
            .push(value, Op::MulCols(self.idx, v.idx), &[self.idx, v.idx]))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|x| x * c), Op::Scale(self.idx, c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|x| x + c), Op::AddScalar(self.idx))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(self.value().map(sigmoid), Op::Sigmoid(self.idx))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(self.value().map(f64::tanh), Op::Tanh(self.idx))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.idx))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(self.value().map(|x| x * x), Op::Square(self.idx))
    }

    pub fn powf(&self, p: f64) -> Var<'t> {
        self.unary(self.value().map(|x| x.powf(p)), Op::PowF(self.idx, p))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.idx))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over the last axis.
    pub fn sum_rows(&self) -> Var<'t> {
        let v = self.value();
        let n = last_dim(v.shape());
        let data = v.data().chunks(n).map(|c| c.iter().sum()).collect();
        let shape = v.shape()[..v.shape().len().saturating_sub(1)].to_vec();
        self.unary(Tensor::from_parts(shape, data), Op::SumRows(self.idx))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax_rows(&self) -> Var<'t> {
        let v = self.value();
        let n = last_dim(v.shape());
        let mut data = vec![0.0; v.len()];
        for (o, r) in data.chunks_mut(n).zip(v.data().chunks(n)) {
            softmax_row(r, o);
        }
        self.unary(Tensor::from_parts(v.shape().to_vec(), data), Op::SoftmaxRows(self.idx))
    }

    /// Log-sum-exp over the last axis.
    pub fn logsumexp_rows(&self) -> Var<'t> {
        let v = self.value();
        let n = last_dim(v.shape());
        let data = v.data().chunks(n).map(logsumexp).collect();
        let shape = v.shape()[..v.shape().len().saturating_sub(1)].to_vec();
        self.unary(Tensor::from_parts(shape, data), Op::LogSumExpRows(self.idx))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        let value = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(value, Op::Reshape(self.idx)))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no operands"))?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {base:?}")));
        }
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?} on axis {axis}")));
            }
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = values.iter().map(|v| v.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let extent = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * extent..(o + 1) * extent]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let idxs: Vec<usize> = parts.iter().map(|p| p.idx).collect();
        Ok(tape.push(
            Tensor::from_parts(shape, data),
            Op::Concat(idxs.clone(), axis),
            &idxs,
        ))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        let shape = v.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("{shape:?} axis {axis} [{start}, {})", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Ok(self.unary(
            Tensor::from_parts(out_shape, data),
            Op::Slice {
                input: self.idx,
                axis,
                start,
            },
        ))
    }

    /// Zero-padded "same" 1-D convolution.
    ///
    /// `self` is `[batch, c_in, len]`, `weight` is `[c_out, c_in, k]` with odd
    /// `k`, `bias` is `[c_out]`.
    pub fn conv1d(&self, weight: &Var<'t>, bias: &Var<'t>) -> Result<Var<'t>> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let ok = x.shape().len() == 3
            && w.shape().len() == 3
            && w.shape()[1] == x.shape()[1]
            && w.shape()[2] % 2 == 1
            && b.shape() == [w.shape()[0]];
        if !ok {
            return Err(Error::shape(
                "conv1d",
                format!("x {:?}, w {:?}, b {:?}", x.shape(), w.shape(), b.shape()),
            ));
        }
        let (batch, cin, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let pad = k / 2;
        let mut out = vec![0.0; batch * cout * len];
        for bi in 0..batch {
            for co in 0..cout {
                let orow = &mut out[(bi * cout + co) * len..(bi * cout + co + 1) * len];
                orow.iter_mut().for_each(|o| *o = b.data()[co]);
                for ci in 0..cin {
                    let xrow = &x.data()[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                    for kk in 0..k {
                        let wk = w.data()[(co * cin + ci) * k + kk];
                        let (lo, hi) = tap_range(kk, pad, len);
                        let src = &xrow[lo + kk - pad..hi + kk - pad];
                        orow[lo..hi].iter_mut().zip(src).for_each(|(o, x)| *o += wk * x);
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![batch, cout, len], out);
        Ok(self.tape.push(
            value,
            Op::Conv1d {
                x: self.idx,
                w: weight.idx,
                b: bias.idx,
            },
            &[self.idx, weight.idx, bias.idx],
        ))
    }

    /// Gated linear unit over axis 1 of a `[batch, 2c, len]` tensor:
    /// `value * sigmoid(gate)` with value the first `c` channels.
    pub fn glu(&self) -> Result<Var<'t>> {
        let v = self.value();
        if v.shape().len() != 3 || v.shape()[1] % 2 != 0 {
            return Err(Error::shape("glu", format!("{:?}", v.shape())));
        }
        let (batch, c2, len) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let c = c2 / 2;
        let mut out = vec![0.0; batch * c * len];
        let mut gates = vec![0.0; batch * c * len];
        for bi in 0..batch {
            for ci in 0..c {
                for l in 0..len {
                    let o = (bi * c + ci) * len + l;
                    gates[o] = sigmoid(v.data()[(bi * c2 + c + ci) * len + l]);
                    out[o] = v.data()[(bi * c2 + ci) * len + l] * gates[o];
                }
            }
        }
        Ok(self.unary(Tensor::from_parts(vec![batch, c, len], out), Op::Glu(self.idx, gates)))
    }

    /// Real DFT along the last axis: `[.., len] -> [.., 2, len / 2 + 1]`
    /// with real parts in slot 0 and imaginary parts in slot 1.
    pub fn rdft(&self) -> Var<'t> {
        let v = self.value();
        let len = last_dim(v.shape());
        let basis = dft::basis(len);
        let bins = basis.bins();
        let mut data = vec![0.0; v.len() / len * 2 * bins];
        for (row, out) in v.data().chunks(len).zip(data.chunks_mut(2 * bins)) {
            let (re, im) = out.split_at_mut(bins);
            basis.forward(row, re, im);
        }
        let mut shape = v.shape().to_vec();
        shape.pop();
        shape.extend([2, bins]);
        self.unary(Tensor::from_parts(shape, data), Op::Rdft(self.idx))
    }

    /// Inverse of [`Var::rdft`]: `[.., 2, len / 2 + 1] -> [.., len]`.
    ///
    /// The spectrum is completed Hermitian-symmetrically, so the output is
    /// exactly real; imaginary parts of the DC and Nyquist bins are dropped.
    pub fn irdft(&self, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        let basis = dft::basis(len);
        let bins = basis.bins();
        let shape = v.shape();
        if shape.len() < 2 || shape[shape.len() - 1] != bins || shape[shape.len() - 2] != 2 {
            return Err(Error::shape("irdft", format!("{shape:?} for length {len}")));
        }
        let rows = v.len() / (2 * bins);
        let mut data = vec![0.0; rows * len];
        for (spec, out) in v.data().chunks(2 * bins).zip(data.chunks_mut(len)) {
            basis.inverse(&spec[..bins], &spec[bins..], out);
        }
        let mut out_shape = shape[..shape.len() - 2].to_vec();
        out_shape.push(len);
        Ok(self.unary(Tensor::from_parts(out_shape, data), Op::Irdft(self.idx)))
    }

    /// Mean squared error against `target` (same shape).
    pub fn mse(&self, target: &Var<'t>) -> Result<Var<'t>> {
        let (p, t) = self.same_shape(target, "mse")?;
        let n = p.len() as f64;
        let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.tape.push(
            Tensor::scalar(s / n),
            Op::Mse(self.idx, target.idx),
            &[self.idx, target.idx],
        ))
    }

    /// Mean cross-entropy of `[rows, classes]` logits against class indices.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        let c = last_dim(v.shape());
        if v.shape().len() != 2 || v.rows() != labels.len() || labels.iter().any(|&l| l >= c) {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?}, {} labels", v.shape(), labels.len()),
            ));
        }
        let total: f64 = v
            .data()
            .chunks(c)
            .zip(labels)
            .map(|(row, &l)| logsumexp(row) - row[l])
            .sum();
        Ok(self.unary(
            Tensor::scalar(total / labels.len() as f64),
            Op::CrossEntropy(self.idx, labels.into()),
        ))
    }

    /// Eigenvectors (as columns, ascending eigenvalue order) of a symmetric
    /// matrix. Each column's largest-magnitude entry is made positive.
    ///
    /// Gradients use the first-order eigenvector perturbation formula; pairs
    /// of (numerically) repeated eigenvalues contribute nothing.
    pub fn sym_eigvecs(&self) -> Result<(Var<'t>, Vec<f64>)> {
        let (values, vectors) = symmetric_eigen(&self.value())?;
        let var = self.unary(
            vectors,
            Op::SymEigvecs {
                input: self.idx,
                eigenvalues: values.clone().into(),
            },
        );
        Ok((var, values))
    }
}

/// Eigendecomposition of a symmetric matrix, ascending eigenvalues, with a
/// deterministic sign convention on the eigenvectors.
pub fn symmetric_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = a.rows();
    if a.shape().len() != 2 || a.cols() != n {
        return Err(Error::shape("sym_eig", format!("{:?}", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::Eigen("non-finite input".into()));
    }
    let m = nalgebra::DMatrix::from_row_slice(n, n, a.data());
    let eig = nalgebra::SymmetricEigen::try_new(m, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..n {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[r * n + col] = sign * v[r];
        }
    }
    Ok((values, Tensor::from_parts(vec![n, n], vectors)))
}
