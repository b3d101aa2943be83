use std::rc::Rc;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    /// `[r, c] -> [1, c]`
    SumRows(Var),
    /// `[r, c] -> [r, 1]`
    SumCols(Var),
    /// `[1, c] -> [r, c]`
    BroadcastRows(Var),
    /// `[r, 1] -> [r, c]`
    BroadcastCols(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    Sqrt(Var),
    /// `out[i] = x[idx[i]]`
    Gather(Var, Rc<[usize]>),
    /// `out[idx[i]] += x[i]`
    ScatterAdd(Var, Rc<[usize]>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of primitive operations.
///
/// Nodes are stored in creation order, so every node's parents precede it.
/// [`Tape::backward`] emits its gradient computation as ordinary tape nodes:
/// a gradient returned by one backward pass can be fed into further
/// operations and differentiated again. This is what lets the meta loss be
/// differentiated through a one-step parameter update.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.to_string()));
        }
        self.nodes.push(Node {
            value,
            op: kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf node. Rank-1 tensors are stored as row vectors.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        let (r, c) = value.dims2()?;
        let value = Tensor::matrix(r, c, value.into_data());
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var> {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.0].value.shape();
        (s[0], s[1])
    }

    /// Whether gradients can flow from `v` back to some trainable leaf.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// Constant copy of `v`'s value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(shape_err(name, va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::matrix(va.rows(), va.cols(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(name, value, op, ng)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::matrix(va.rows(), va.cols(), data);
        let ng = self.ng(a);
        self.push(name, value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary("recip", a, f64::recip, Op::Recip(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = (va.rows(), va.cols());
        let (k2, n) = (vb.rows(), vb.cols());
        if k != k2 {
            return Err(shape_err("matmul", va, vb));
        }
        let (ad, bd) = (va.data(), vb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push("matmul", Tensor::matrix(m, n, out), Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let d = va.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let ng = self.ng(a);
        self.push("transpose", Tensor::matrix(c, r, out), Op::Transpose(a), ng)
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(va.row_slice(i)) {
                *o += x;
            }
        }
        let ng = self.ng(a);
        self.push("sum_rows", Tensor::matrix(1, c, out), Op::SumRows(a), ng)
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let r = va.rows();
        let out = (0..r).map(|i| va.row_slice(i).iter().sum()).collect();
        let ng = self.ng(a);
        self.push("sum_cols", Tensor::matrix(r, 1, out), Op::SumCols(a), ng)
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.sum_rows(a)?;
        self.sum_cols(s)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let va = self.value(a);
        if va.rows() != 1 {
            return Err(shape_err("broadcast_rows", va, va));
        }
        let c = va.cols();
        let mut out = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            out.extend_from_slice(va.data());
        }
        let ng = self.ng(a);
        self.push("broadcast_rows", Tensor::matrix(rows, c, out), Op::BroadcastRows(a), ng)
    }

    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let va = self.value(a);
        if va.cols() != 1 {
            return Err(shape_err("broadcast_cols", va, va));
        }
        let r = va.rows();
        let out = va.data().iter().flat_map(|&x| std::iter::repeat(x).take(cols)).collect();
        let ng = self.ng(a);
        self.push("broadcast_cols", Tensor::matrix(r, cols, out), Op::BroadcastCols(a), ng)
    }

    /// `a [r, c] + bias [1, c]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let (br, bc) = self.dims(bias);
        if br != 1 || bc != c {
            return Err(shape_err("add_row", self.value(a), self.value(bias)));
        }
        let b = self.broadcast_rows(bias, r)?;
        self.add(a, b)
    }

    /// `out[i] = a[idx[i]]` over flat storage, reshaped to `rows x cols`.
    pub fn gather(&mut self, a: Var, idx: Rc<[usize]>, rows: usize, cols: usize) -> Result<Var> {
        let va = self.value(a);
        if idx.len() != rows * cols || idx.iter().any(|&i| i >= va.len()) {
            return Err(Error::Shape {
                op: "gather",
                lhs: va.shape().to_vec(),
                rhs: vec![rows, cols],
            });
        }
        let d = va.data();
        let out = idx.iter().map(|&i| d[i]).collect();
        let ng = self.ng(a);
        self.push("gather", Tensor::matrix(rows, cols, out), Op::Gather(a, idx), ng)
    }

    /// `out[idx[i]] += a[i]` into a zero `rows x cols` tensor.
    pub fn scatter_add(&mut self, a: Var, idx: Rc<[usize]>, rows: usize, cols: usize) -> Result<Var> {
        let va = self.value(a);
        if idx.len() != va.len() || idx.iter().any(|&i| i >= rows * cols) {
            return Err(Error::Shape {
                op: "scatter_add",
                lhs: va.shape().to_vec(),
                rhs: vec![rows, cols],
            });
        }
        let mut out = vec![0.0; rows * cols];
        for (&i, &x) in idx.iter().zip(va.data()) {
            out[i] += x;
        }
        let ng = self.ng(a);
        self.push("scatter_add", Tensor::matrix(rows, cols, out), Op::ScatterAdd(a, idx), ng)
    }

    /// Embedding lookup: rows `ids` of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: vec![r, c],
                rhs: vec![bad],
            });
        }
        let idx: Rc<[usize]> = ids.iter().flat_map(|&i| (0..c).map(move |j| i * c + j)).collect();
        self.gather(table, idx, ids.len(), c)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat input"))?;
        let r = self.dims(first).0;
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut acc: Option<Var> = None;
        let mut offset = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(shape_err("concat_cols", self.value(first), self.value(p)));
            }
            let idx: Rc<[usize]> = (0..pr)
                .flat_map(|i| (0..pc).map(move |j| i * total + offset + j))
                .collect();
            let placed = self.scatter_add(p, idx, r, total)?;
            acc = Some(match acc {
                Some(a) => self.add(a, placed)?,
                None => placed,
            });
            offset += pc;
        }
        Ok(acc.expect("non-empty parts"))
    }

    /// Rows `[start, start + len)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > r || len == 0 {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let idx: Rc<[usize]> = (start * c..(start + len) * c).collect();
        self.gather(a, idx, len, c)
    }

    /// Column-wise max within consecutive row segments of length `seg`:
    /// `[n * seg, c] -> [n, c]`. Ties resolve to the earliest row.
    pub fn segment_max(&mut self, a: Var, seg: usize) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        if seg == 0 || r % seg != 0 {
            return Err(Error::Shape {
                op: "segment_max",
                lhs: vec![r, c],
                rhs: vec![seg],
            });
        }
        let n = r / seg;
        let d = va.data();
        let mut idx = Vec::with_capacity(n * c);
        for s in 0..n {
            for j in 0..c {
                let mut best = (s * seg) * c + j;
                for t in 1..seg {
                    let i = (s * seg + t) * c + j;
                    if d[i] > d[best] {
                        best = i;
                    }
                }
                idx.push(best);
            }
        }
        self.gather(a, idx.into(), n, c)
    }

    /// Inverted dropout. Identity when `train` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !train || p <= 0.0 {
            return Ok(a);
        }
        if p >= 1.0 {
            return Err(Error::config(format!("dropout probability {p} must be < 1")));
        }
        let (r, c) = self.dims(a);
        let keep = 1.0 - p;
        let mask = (0..r * c)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.constant(Tensor::matrix(r, c, mask))?;
        self.mul(a, m)
    }

    /// Row-wise log-softmax with a constant max shift.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let maxes = (0..r)
            .map(|i| va.row_slice(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let m = self.constant(Tensor::matrix(r, 1, maxes))?;
        let mb = self.broadcast_cols(m, c)?;
        let shifted = self.sub(a, mb)?;
        let e = self.exp(shifted)?;
        let s = self.sum_cols(e)?;
        let lse = self.log(s)?;
        let lb = self.broadcast_cols(lse, c)?;
        self.sub(shifted, lb)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ls = self.log_softmax_rows(a)?;
        self.exp(ls)
    }

    /// Unreduced cross-entropy `[B, K] -> [B, 1]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, k) = self.dims(logits);
        if targets.len() != b {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: vec![b, k],
                rhs: vec![targets.len()],
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Label { label: t, classes: k });
        }
        let ls = self.log_softmax_rows(logits)?;
        let idx: Rc<[usize]> = targets.iter().enumerate().map(|(i, &t)| i * k + t).collect();
        let picked = self.gather(ls, idx, b, 1)?;
        self.neg(picked)
    }

    /// Each row scaled to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let c = self.dims(a).1;
        let sq = self.mul(a, a)?;
        let ss = self.sum_cols(sq)?;
        let ss = self.add_scalar(ss, 1e-12)?;
        let norm = self.sqrt(ss)?;
        let inv = self.recip(norm)?;
        let inv = self.broadcast_cols(inv, c)?;
        self.mul(a, inv)
    }

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// The returned vars live on this tape and remain differentiable. Inputs
    /// that `loss` does not depend on receive a zero gradient.
    pub fn backward(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let shape = self.value(loss).shape().to_vec();
        if shape != [1, 1] {
            return Err(Error::NotScalar(shape));
        }
        if !self.ng(loss) {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Var>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(self.scalar(1.0)?);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let out = Var(i);
            let contribs = self.vjp(&op, out, g)?;
            for (parent, pg) in contribs {
                let slot = &mut grads[parent.0];
                *slot = Some(match *slot {
                    Some(prev) => self.add(prev, pg)?,
                    None => pg,
                });
            }
        }
        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let (r, c) = self.dims(w);
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect()
    }

    /// Gradient values only.
    pub fn grad_values(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let gs = self.backward(loss, wrt)?;
        Ok(gs.into_iter().map(|g| self.value(g).clone()).collect())
    }

    fn vjp(&mut self, op: &Op, out: Var, g: Var) -> Result<Vec<(Var, Var)>> {
        let mut res = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.ng(a) {
                    res.push((a, g));
                }
                if self.ng(b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if self.ng(a) {
                    res.push((a, g));
                }
                if self.ng(b) {
                    res.push((b, self.neg(g)?));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(a) {
                    res.push((a, self.mul(g, b)?));
                }
                if self.ng(b) {
                    res.push((b, self.mul(g, a)?));
                }
            }
            Op::Scale(a, c) => res.push((a, self.scale(g, c)?)),
            Op::AddScalar(a) => res.push((a, g)),
            Op::MatMul(a, b) => {
                if self.ng(a) {
                    let bt = self.transpose(b)?;
                    res.push((a, self.matmul(g, bt)?));
                }
                if self.ng(b) {
                    let at = self.transpose(a)?;
                    res.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => res.push((a, self.transpose(g)?)),
            Op::SumRows(a) => {
                let r = self.dims(a).0;
                res.push((a, self.broadcast_rows(g, r)?));
            }
            Op::SumCols(a) => {
                let c = self.dims(a).1;
                res.push((a, self.broadcast_cols(g, c)?));
            }
            Op::BroadcastRows(a) => res.push((a, self.sum_rows(g)?)),
            Op::BroadcastCols(a) => res.push((a, self.sum_cols(g)?)),
            Op::Sigmoid(a) => {
                let one_minus = self.scale(out, -1.0)?;
                let one_minus = self.add_scalar(one_minus, 1.0)?;
                let d = self.mul(out, one_minus)?;
                res.push((a, self.mul(g, d)?));
            }
            Op::Tanh(a) => {
                let sq = self.mul(out, out)?;
                let d = self.scale(sq, -1.0)?;
                let d = self.add_scalar(d, 1.0)?;
                res.push((a, self.mul(g, d)?));
            }
            Op::Relu(a) => {
                let va = self.value(a);
                let mask = va.data().iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
                let m = self.constant(Tensor::matrix(va.rows(), va.cols(), mask))?;
                res.push((a, self.mul(g, m)?));
            }
            Op::Exp(a) => res.push((a, self.mul(g, out)?)),
            Op::Log(a) => {
                let r = self.recip(a)?;
                res.push((a, self.mul(g, r)?));
            }
            Op::Recip(a) => {
                let sq = self.mul(out, out)?;
                let t = self.mul(g, sq)?;
                res.push((a, self.neg(t)?));
            }
            Op::Sqrt(a) => {
                let r = self.recip(out)?;
                let t = self.mul(g, r)?;
                res.push((a, self.scale(t, 0.5)?));
            }
            Op::Gather(a, ref idx) => {
                let (r, c) = self.dims(a);
                res.push((a, self.scatter_add(g, idx.clone(), r, c)?));
            }
            Op::ScatterAdd(a, ref idx) => {
                let (r, c) = self.dims(a);
                res.push((a, self.gather(g, idx.clone(), r, c)?));
            }
        }
        Ok(res)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_and_its_slope() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0)).unwrap();
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).item(), 0.5);
        let g = t.grad_values(y, &[x]).unwrap();
        assert_eq!(g[0].item(), 0.25);
    }

    #[test]
    fn concat_matches_definition() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::row(vec![1.0, 2.0])).unwrap();
        let b = t.constant(Tensor::row(vec![3.0])).unwrap();
        let c = t.concat_cols(&[a, b]).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn matmul_shape_error_names_primitive_and_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3)).unwrap();
        let b = t.constant(Tensor::zeros(2, 3)).unwrap();
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn non_scalar_and_detached_losses_are_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row(vec![1.0, 2.0])).unwrap();
        let y = t.tanh(x).unwrap();
        assert!(matches!(t.backward(y, &[x]), Err(Error::NotScalar(_))));
        let c = t.scalar(3.0).unwrap();
        assert!(matches!(t.backward(c, &[x]), Err(Error::Detached)));
    }

    #[test]
    fn constant_wrt_input_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row(vec![1.0, -2.0])).unwrap();
        let y = t.param(Tensor::scalar(4.0)).unwrap();
        let loss = t.mul(y, y).unwrap();
        let g = t.grad_values(loss, &[x, y]).unwrap();
        assert_eq!(g[0].data(), &[0.0, 0.0]);
        assert_eq!(g[1].item(), 8.0);
    }

    #[test]
    fn second_derivative_through_backward() {
        // f(x) = x^3, f'(x) = 3x^2, f''(x) = 6x
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(2.0)).unwrap();
        let x2 = t.mul(x, x).unwrap();
        let x3 = t.mul(x2, x).unwrap();
        let g = t.backward(x3, &[x]).unwrap()[0];
        assert_eq!(t.value(g).item(), 12.0);
        let h = t.grad_values(g, &[x]).unwrap();
        assert_eq!(h[0].item(), 12.0);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_inverted() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(1, 20000, 1.0)).unwrap();
        assert_eq!(t.dropout(x, 0.3, false, &mut rng).unwrap(), x);
        let y = t.dropout(x, 0.3, true, &mut rng).unwrap();
        let v = t.value(y).data();
        assert!(v.iter().all(|&z| z == 0.0 || (z - 1.0 / 0.7).abs() < 1e-12));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn log_of_zero_is_reported_as_non_finite() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(t.log(x), Err(Error::NonFinite(_))));
    }
}
