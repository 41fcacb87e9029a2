//! Dynamic reverse-mode tape.
//!
//! Every primitive appends a node holding its forward value; `backward`
//! walks the nodes once in reverse insertion order, which is a valid
//! topological order because inputs always precede outputs. Reductions
//! accumulate in `f64` regardless of the storage type.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Softmax(Var, usize),
    LogSoftmax(Var),
    Embedding(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Pick(Var, usize),
    CrossEntropy(Var, usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed primitives for one forward pass.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

/// Dot product at `f64` with eight independent partial sums, which lets the
/// compiler vectorise; the summation order is fixed, so results stay
/// deterministic.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k].f64() * y[k].f64();
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x.f64() * y.f64();
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_slice<T: Real>(x: &[T], out: &mut [T]) {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
    let mut z = 0.0;
    for v in x {
        z += (v.f64() - max).exp();
    }
    for (o, v) in out.iter_mut().zip(x) {
        *o = T::of((v.f64() - max).exp() / z);
    }
}

fn log_sum_exp<T: Real>(x: &[T]) -> f64 {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
    let z: f64 = x.iter().map(|v| (v.f64() - max).exp()).sum();
    max + z.ln()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(1024),
            grads: Vec::new(),
            consumed: false,
        }
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

    /// Scalar value of a one-element node, widened to `f64`.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item().f64()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Matrix product. Supports `[m,k]x[k,n]`, `[m,k]x[k]` and `[k]x[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (av.shape(), bv.shape());
        let out = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => {
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (av.data(), bv.data());
                let mut out = vec![T::zero(); m * n];
                let mut acc = vec![0f64; n];
                for i in 0..m {
                    acc.iter_mut().for_each(|x| *x = 0.0);
                    for p in 0..k {
                        let aip = ad[i * k + p].f64();
                        if aip == 0.0 {
                            continue;
                        }
                        let brow = &bd[p * n..(p + 1) * n];
                        for (x, bv) in acc.iter_mut().zip(brow) {
                            *x += aip * bv.f64();
                        }
                    }
                    for j in 0..n {
                        out[i * n + j] = T::of(acc[j]);
                    }
                }
                Tensor::new(vec![m, n], out)?
            }
            (2, 1) if sa[1] == sb[0] => {
                let (m, k) = (sa[0], sa[1]);
                let (ad, bd) = (av.data(), bv.data());
                let out = (0..m)
                    .map(|i| T::of(dot(&ad[i * k..(i + 1) * k], bd)))
                    .collect();
                Tensor::vector(out)
            }
            (1, 2) if sa[0] == sb[0] => {
                let (k, n) = (sb[0], sb[1]);
                let (ad, bd) = (av.data(), bv.data());
                let mut acc = vec![0f64; n];
                for p in 0..k {
                    let ap = ad[p].f64();
                    if ap == 0.0 {
                        continue;
                    }
                    for (x, bv) in acc.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                        *x += ap * bv.f64();
                    }
                }
                Tensor::vector(acc.into_iter().map(T::of).collect())
            }
            _ => return Err(shape_err("matmul", sa, sb)),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor<T>> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(shape_err(op, av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| T::of(f(x.f64(), y.f64())))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("multiply", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|x| T::of(x.f64() * c)).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.rank() != 1 {
                return Err(shape_err("concat", v.shape(), &[]));
            }
            data.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(shape_err("stack", &[0], &[]));
        };
        let width = self.nodes[first.0].value.len();
        let mut data = Vec::with_capacity(width * rows.len());
        for &r in rows {
            let v = &self.nodes[r.0].value;
            if v.rank() != 1 || v.len() != width {
                return Err(shape_err("stack", &[width], v.shape()));
            }
            data.extend_from_slice(v.data());
        }
        let rg = rows.iter().any(|&p| self.rg(p));
        let out = Tensor::new(vec![rows.len(), width], data)?;
        Ok(self.push(out, Op::Stack(rows.to_vec()), rg))
    }

    /// Contiguous sub-vector `[start, start+len)`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if v.rank() != 1 || start + len > v.len() {
            return Err(shape_err("split", v.shape(), &[start, len]));
        }
        let out = Tensor::vector(v.data()[start..start + len].to_vec());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Slice(a, start), rg))
    }

    /// Splits a vector into consecutive pieces of the given sizes.
    pub fn split(&mut self, a: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        if total != self.nodes[a.0].value.len() || self.nodes[a.0].value.rank() != 1 {
            return Err(shape_err("split", self.shape(a), sizes));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            out.push(self.slice(a, start, s)?);
            start += s;
        }
        Ok(out)
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if v.rank() != 2 || r >= v.rows() {
            return Err(Error::Index {
                op: "row",
                index: r,
                len: v.rows(),
            });
        }
        let out = Tensor::vector(v.row(r).to_vec());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Row(a, r), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor<T> {
        let v = &self.nodes[a.0].value;
        let data = v.data().iter().map(|x| T::of(f(x.f64()))).collect();
        Tensor::new(v.shape().to_vec(), data).expect("same shape")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    /// Softmax along `axis` (0 for vectors; 0 or 1 for matrices).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let out = match (v.rank(), axis) {
            (1, 0) => {
                let mut out = vec![T::zero(); v.len()];
                softmax_slice(v.data(), &mut out);
                Tensor::vector(out)
            }
            (2, 1) => {
                let mut out = vec![T::zero(); v.len()];
                let c = v.cols();
                for r in 0..v.rows() {
                    softmax_slice(v.row(r), &mut out[r * c..(r + 1) * c]);
                }
                Tensor::new(v.shape().to_vec(), out)?
            }
            (2, 0) => {
                let (rows, cols) = (v.rows(), v.cols());
                let mut out = vec![T::zero(); v.len()];
                let mut col = vec![T::zero(); rows];
                let mut sm = vec![T::zero(); rows];
                for c in 0..cols {
                    for r in 0..rows {
                        col[r] = v.data()[r * cols + c];
                    }
                    softmax_slice(&col, &mut sm);
                    for r in 0..rows {
                        out[r * cols + c] = sm[r];
                    }
                }
                Tensor::new(v.shape().to_vec(), out)?
            }
            _ => return Err(shape_err("softmax", v.shape(), &[axis])),
        };
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a, axis), rg))
    }

    /// Numerically stable log-softmax of a vector.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if v.rank() != 1 || v.is_empty() {
            return Err(shape_err("log_softmax", v.shape(), &[]));
        }
        let lse = log_sum_exp(v.data());
        let out = Tensor::vector(v.data().iter().map(|x| T::of(x.f64() - lse)).collect());
        let rg = self.rg(a);
        Ok(self.push(out, Op::LogSoftmax(a), rg))
    }

    /// Rows of `table` selected by `ids`, as an `[ids.len(), width]` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = &self.nodes[table.0].value;
        if t.rank() != 2 {
            return Err(shape_err("embedding_lookup", t.shape(), &[]));
        }
        let width = t.cols();
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::Index {
                    op: "embedding_lookup",
                    index: id,
                    len: t.rows(),
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), width], data)?;
        let rg = self.rg(table);
        Ok(self.push(out, Op::Embedding(table, ids.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().map(|x| x.f64()).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(T::of(s)), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let s: f64 = v.data().iter().map(|x| x.f64()).sum::<f64>() / v.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(T::of(s)), Op::Mean(a), rg)
    }

    /// Sum of several scalars.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        match terms {
            [] => Ok(self.constant(Tensor::scalar(T::zero()))),
            [one] => Ok(*one),
            _ => {
                let v = self.concat_scalars(terms)?;
                Ok(self.sum(v))
            }
        }
    }

    fn concat_scalars(&mut self, terms: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(terms.len());
        for &t in terms {
            let v = &self.nodes[t.0].value;
            if v.len() != 1 {
                return Err(shape_err("add_all", v.shape(), &[]));
            }
            data.push(v.item());
        }
        let rg = terms.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::vector(data), Op::Concat(terms.to_vec()), rg))
    }

    /// Single element of a vector as a scalar.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if i >= v.len() {
            return Err(Error::Index {
                op: "pick",
                index: i,
                len: v.len(),
            });
        }
        let out = Tensor::scalar(v.data()[i]);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Pick(a, i), rg))
    }

    /// `-log softmax(logits)[target]`, stabilised by max subtraction.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let v = &self.nodes[logits.0].value;
        if v.rank() != 1 {
            return Err(shape_err("cross_entropy", v.shape(), &[]));
        }
        if target >= v.len() {
            return Err(Error::Index {
                op: "cross_entropy",
                index: target,
                len: v.len(),
            });
        }
        let loss = log_sum_exp(v.data()) - v.data()[target].f64();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::CrossEntropy(logits, target),
            rg,
        ))
    }

    /// Reverse sweep from a scalar root. A tape supports one backward pass.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(shape_err("backward", self.shape(root), &[]));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(vec![T::zero(); self.nodes[v.0].value.len()]);
        }
        slot.as_mut()
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
                let (ad, bd) = (av.data(), bv.data());
                match (sa.len(), sb.len()) {
                    (2, 2) => {
                        let (m, k, n) = (sa[0], sa[1], sb[1]);
                        if let Some(ga) = self.acc(grads, *a) {
                            for r in 0..m {
                                let grow = &g[r * n..(r + 1) * n];
                                for p in 0..k {
                                    let s = dot(grow, &bd[p * n..(p + 1) * n]);
                                    ga[r * k + p] = T::of(ga[r * k + p].f64() + s);
                                }
                            }
                        }
                        if let Some(gb) = self.acc(grads, *b) {
                            for r in 0..m {
                                for p in 0..k {
                                    let arp = ad[r * k + p].f64();
                                    if arp == 0.0 {
                                        continue;
                                    }
                                    let row = &mut gb[p * n..(p + 1) * n];
                                    for (x, gv) in row.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                                        *x = T::of(x.f64() + arp * gv.f64());
                                    }
                                }
                            }
                        }
                    }
                    (2, 1) => {
                        let (m, k) = (sa[0], sa[1]);
                        if let Some(ga) = self.acc(grads, *a) {
                            for r in 0..m {
                                let gr = g[r].f64();
                                if gr == 0.0 {
                                    continue;
                                }
                                for (x, bv) in ga[r * k..(r + 1) * k].iter_mut().zip(bd) {
                                    *x = T::of(x.f64() + gr * bv.f64());
                                }
                            }
                        }
                        if let Some(gb) = self.acc(grads, *b) {
                            let mut acc = vec![0f64; k];
                            for r in 0..m {
                                let gr = g[r].f64();
                                if gr == 0.0 {
                                    continue;
                                }
                                for (x, av) in acc.iter_mut().zip(&ad[r * k..(r + 1) * k]) {
                                    *x += gr * av.f64();
                                }
                            }
                            for (x, s) in gb.iter_mut().zip(acc) {
                                *x = T::of(x.f64() + s);
                            }
                        }
                    }
                    (1, 2) => {
                        let (k, n) = (sb[0], sb[1]);
                        if let Some(ga) = self.acc(grads, *a) {
                            for p in 0..k {
                                let s = dot(&bd[p * n..(p + 1) * n], g);
                                ga[p] = T::of(ga[p].f64() + s);
                            }
                        }
                        if let Some(gb) = self.acc(grads, *b) {
                            for p in 0..k {
                                let ap = ad[p].f64();
                                if ap == 0.0 {
                                    continue;
                                }
                                for (x, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(g) {
                                    *x = T::of(x.f64() + ap * gv.f64());
                                }
                            }
                        }
                    }
                    _ => unreachable!("shapes validated in forward"),
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, gv) in ga.iter_mut().zip(g) {
                        *x = *x + *gv;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (x, gv) in gb.iter_mut().zip(g) {
                        *x = T::of(x.f64() + sign * gv.f64());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gv), bv) in ga.iter_mut().zip(g).zip(bd) {
                        *x = T::of(x.f64() + gv.f64() * bv.f64());
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, gv), av) in gb.iter_mut().zip(g).zip(ad) {
                        *x = T::of(x.f64() + gv.f64() * av.f64());
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, gv) in ga.iter_mut().zip(g) {
                        *x = T::of(x.f64() + c * gv.f64());
                    }
                }
            }
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(gp) = self.acc(grads, *p) {
                        for (x, gv) in gp.iter_mut().zip(&g[off..off + len]) {
                            *x = *x + *gv;
                        }
                    }
                    off += len;
                }
            }
            Op::Slice(a, start) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, gv) in ga[*start..*start + g.len()].iter_mut().zip(g) {
                        *x = *x + *gv;
                    }
                }
            }
            Op::Row(a, r) => {
                let c = g.len();
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, gv) in ga[r * c..(r + 1) * c].iter_mut().zip(g) {
                        *x = *x + *gv;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        let yv = yv.f64();
                        *x = T::of(x.f64() + gv.f64() * (1.0 - yv * yv));
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        let yv = yv.f64();
                        *x = T::of(x.f64() + gv.f64() * yv * (1.0 - yv));
                    }
                }
            }
            Op::Log(a) => {
                let ad = self.nodes[a.0].value.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gv), av) in ga.iter_mut().zip(g).zip(ad) {
                        *x = T::of(x.f64() + gv.f64() / av.f64());
                    }
                }
            }
            Op::Softmax(a, axis) => {
                let v = &node.value;
                let (rows, cols) = (v.rows(), v.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    let slices: Vec<Vec<usize>> = match (v.rank(), axis) {
                        (1, _) => vec![(0..v.len()).collect()],
                        (_, 1) => (0..rows)
                            .map(|r| (r * cols..(r + 1) * cols).collect())
                            .collect(),
                        _ => (0..cols)
                            .map(|c| (0..rows).map(|r| r * cols + c).collect())
                            .collect(),
                    };
                    for idx in slices {
                        let s: f64 = idx.iter().map(|&j| g[j].f64() * y[j].f64()).sum();
                        for &j in &idx {
                            ga[j] = T::of(ga[j].f64() + y[j].f64() * (g[j].f64() - s));
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    let gs: f64 = g.iter().map(|x| x.f64()).sum();
                    for ((x, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        *x = T::of(x.f64() + gv.f64() - yv.f64().exp() * gs);
                    }
                }
            }
            Op::Embedding(table, ids) => {
                let width = self.nodes[table.0].value.cols();
                if let Some(gt) = self.acc(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for (x, gv) in gt[id * width..(id + 1) * width]
                            .iter_mut()
                            .zip(&g[r * width..(r + 1) * width])
                        {
                            *x = *x + *gv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = g[0];
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x = *x + g0);
                }
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len().max(1) as f64;
                let g0 = g[0].f64() / n;
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().for_each(|x| *x = T::of(x.f64() + g0));
                }
            }
            Op::Pick(a, j) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga[*j] = ga[*j] + g[0];
                }
            }
            Op::CrossEntropy(a, t) => {
                let ad = self.nodes[a.0].value.data();
                let lse = log_sum_exp(ad);
                let g0 = g[0].f64();
                if let Some(ga) = self.acc(grads, *a) {
                    for (j, (x, av)) in ga.iter_mut().zip(ad).enumerate() {
                        let p = (av.f64() - lse).exp();
                        let d = if j == *t { p - 1.0 } else { p };
                        *x = T::of(x.f64() + g0 * d);
                    }
                }
            }
        }
    }

    /// Gradient accumulated into `v` by the last backward pass.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).ok()
    }

    /// Like [`grad`](Self::grad) but zeros when nothing flowed into `v`.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }
}
