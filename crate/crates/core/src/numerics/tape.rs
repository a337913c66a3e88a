//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! immutable once recorded; [`Tape::backward`] replays the list in reverse and
//! returns a [`Gradients`] map. Parameters enter through [`Tape::param`], which
//! records each [`ParamId`] at most once so repeated use accumulates.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    Softmax {
        input: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LogSumExpRows(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    GroupMax {
        input: Var,
        argmax: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        neighbors: Vec<Vec<usize>>,
        heads: usize,
        weights: Vec<f64>,
    },
    PositionalEncoding {
        input: Var,
        dim: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-threaded recording of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    /// Records a leaf; gradients flow to it when `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    /// Records a parameter as a differentiable leaf, once per tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.tensor(id).clone().with_requires_grad(true);
        let v = self.push(t, Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(dim_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// Adds a length-`n` row vector to every row of an `[.., n]` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let n = ta.cols();
        if tr.len() != n {
            return Err(dim_err("add_row", ta, tr));
        }
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            chunk.iter_mut().zip(tr.data()).for_each(|(x, y)| *x += y);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Clamps into `[lo, hi]`; gradient passes where the input lies inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let shape = ta.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension {
                op: "softmax",
                lhs: shape,
                rhs: vec![axis],
            });
        }
        if ta.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("softmax"));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = ta.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(a);
        Ok(self.push(
            t,
            Op::Softmax {
                input: a,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Row-wise `log Σ exp`, producing an `[rows, 1]` column.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("logsumexp"));
        }
        let out: Vec<f64> = (0..ta.rows())
            .map(|r| {
                let row = ta.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
            })
            .collect();
        let t = Tensor::new(vec![out.len(), 1], out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::LogSumExpRows(a), rg))
    }

    /// Normalizes each row (last axis) to zero mean and unit variance, then
    /// applies `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let n = tx.cols();
        if tg.len() != n || tb.len() != n {
            return Err(dim_err("layer_norm", tx, tg));
        }
        let rows = tx.rows();
        let mut normalized = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                normalized[r * n + c] = h;
                out[r * n + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(dim_err("concat_cols", self.value(parts[0]), t));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = self.value(p);
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w].copy_from_slice(t.row(r));
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(dim_err("concat_rows", self.value(parts[0]), t));
            }
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / cols.max(1);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (rows, cols) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::contract(format!(
                    "gather_rows index {i} out of range for {rows} rows"
                )));
            }
            data.extend_from_slice(ta.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![indices.len(), cols], data)?,
            Op::GatherRows(a, indices.to_vec()),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start > end || end > ta.cols() {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let rows = ta.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![rows, end - start], data)?,
            Op::SliceCols(a, start, end),
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Column-wise maximum over each group of rows, giving `[groups, cols]`.
    ///
    /// Rows outside every group never influence the output. Ties resolve to
    /// the first row listed in the group.
    pub fn group_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let ta = self.value(a);
        let (rows, cols) = (ta.rows(), ta.cols());
        let mut out = vec![f64::NEG_INFINITY; groups.len() * cols];
        let mut argmax = vec![usize::MAX; groups.len() * cols];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::contract(format!("group {g} of group_max is empty")));
            }
            for &r in members {
                if r >= rows {
                    return Err(Error::contract(format!("group_max row {r} out of range")));
                }
                let row = ta.row(r);
                for c in 0..cols {
                    if row[c] > out[g * cols + c] || argmax[g * cols + c] == usize::MAX {
                        out[g * cols + c] = row[c];
                        argmax[g * cols + c] = r;
                    }
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![groups.len(), cols], out)?,
            Op::GroupMax { input: a, argmax },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention where query `i` attends only
    /// to the key/value rows listed in `neighbors[i]`.
    ///
    /// `q` is `[n, d]`, `k` and `v` are `[m, d]`; `d` must divide by `heads`.
    pub fn neighbor_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        neighbors: Vec<Vec<usize>>,
        heads: usize,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        if tk.cols() != d || tv.cols() != d || tk.rows() != tv.rows() {
            return Err(dim_err("neighbor_attention", tq, tk));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::contract(format!(
                "model dim {d} not divisible by {heads} heads"
            )));
        }
        if neighbors.len() != tq.rows() {
            return Err(Error::contract("one neighbor list per query required"));
        }
        let m = tk.rows();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let total: usize = neighbors.iter().map(Vec::len).sum();
        let mut weights = Vec::with_capacity(total * heads);
        let mut out = vec![0.0; tq.rows() * d];
        let mut scores = Vec::new();
        for (i, nb) in neighbors.iter().enumerate() {
            if nb.is_empty() {
                return Err(Error::contract(format!("query {i} has no keys to attend")));
            }
            if let Some(&bad) = nb.iter().find(|&&j| j >= m) {
                return Err(Error::contract(format!("key index {bad} out of range")));
            }
            let qi = tq.row(i);
            for h in 0..heads {
                let span = h * dh..(h + 1) * dh;
                let qh = &qi[span.clone()];
                scores.clear();
                scores.extend(nb.iter().map(|&j| {
                    let kj = &tk.row(j)[span.clone()];
                    qh.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                }));
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                let dst = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
                for (&j, s) in nb.iter().zip(scores.iter()) {
                    let w = s / z;
                    weights.push(w);
                    let vj = &tv.row(j)[span.clone()];
                    dst.iter_mut().zip(vj).for_each(|(o, x)| *o += w * x);
                }
            }
        }
        let t = Tensor::new(vec![tq.rows(), d], out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                neighbors,
                heads,
                weights,
            },
            rg,
        ))
    }

    /// Sinusoidal encoding of `[n, 2]` positions into `[n, dim]`; see
    /// [`crate::encoder::positional_encoding`] for the layout.
    pub fn positional_encoding(&mut self, positions: Var, dim: usize) -> Result<Var> {
        let tp = self.value(positions);
        if tp.cols() != 2 {
            return Err(Error::Dimension {
                op: "positional_encoding",
                lhs: tp.shape().to_vec(),
                rhs: vec![2],
            });
        }
        if dim == 0 || !dim.is_multiple_of(4) {
            return Err(Error::contract(format!(
                "positional encoding dim {dim} must be a positive multiple of 4"
            )));
        }
        let freqs = pe_frequencies(dim);
        let rows = tp.rows();
        let mut out = vec![0.0; rows * dim];
        for r in 0..rows {
            let p = tp.row(r);
            encode_position_into(&freqs, [p[0], p[1]], &mut out[r * dim..(r + 1) * dim]);
        }
        let rg = self.rg(positions);
        Ok(self.push(
            Tensor::new(vec![rows, dim], out)?,
            Op::PositionalEncoding {
                input: positions,
                dim,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(
                        m,
                        n,
                        k,
                        g,
                        (n as isize, 1),
                        tb.data(),
                        (1, n as isize),
                        ga,
                        1.0,
                    );
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(
                        k,
                        m,
                        n,
                        ta.data(),
                        (1, k as isize),
                        g,
                        (n as isize, 1),
                        gb,
                        1.0,
                    );
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(grads, v) {
                        axpy(s, g, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    axpy(s, g, 1.0);
                }
                if let Some(s) = self.slot(grads, *b) {
                    axpy(s, g, -1.0);
                }
            }
            Op::AddRow(a, row) => {
                if let Some(s) = self.slot(grads, *a) {
                    axpy(s, g, 1.0);
                }
                let n = out.cols();
                if let Some(s) = self.slot(grads, *row) {
                    for chunk in g.chunks(n.max(1)) {
                        s.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for ((x, gi), bi) in s.iter_mut().zip(g).zip(tb.data()) {
                        *x += gi * bi;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for ((x, gi), ai) in s.iter_mut().zip(g).zip(ta.data()) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for ((x, gi), bi) in s.iter_mut().zip(g).zip(tb.data()) {
                        *x += gi / bi;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for (((x, gi), ai), bi) in s.iter_mut().zip(g).zip(ta.data()).zip(tb.data()) {
                        *x -= gi * ai / (bi * bi);
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = self.slot(grads, *a) {
                    axpy(s, g, *c);
                }
            }
            Op::Offset(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    axpy(s, g, 1.0);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(s) = self.slot(grads, *a) {
                    for ((d, gi), xi) in s.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Exp(a) => self.elementwise_back(grads, *a, g, |_, y, gi| gi * y, out),
            Op::Log(a) => self.elementwise_back(grads, *a, g, |x, _, gi| gi / x, out),
            Op::Tanh(a) => self.elementwise_back(grads, *a, g, |_, y, gi| gi * (1.0 - y * y), out),
            Op::Abs(a) => self.elementwise_back(
                grads,
                *a,
                g,
                |x, _, gi| {
                    if x > 0.0 {
                        gi
                    } else if x < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                },
                out,
            ),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.elementwise_back(
                    grads,
                    *a,
                    g,
                    |x, _, gi| if x >= lo && x <= hi { gi } else { 0.0 },
                    out,
                )
            }
            Op::Softmax {
                input,
                outer,
                len,
                inner,
            } => {
                let y = out.data();
                if let Some(s) = self.slot(grads, *input) {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..*len).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..*len {
                                s[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let ta = self.value(*a);
                let n = ta.cols();
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..ta.rows() {
                        let lse = out.data()[r];
                        for c in 0..n {
                            s[r * n + c] += g[r] * (ta.data()[r * n + c] - lse).exp();
                        }
                    }
                }
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let n = out.cols();
                let rows = out.rows();
                let gain_v = self.value(*gain).data();
                if let Some(s) = self.slot(grads, *gain) {
                    for r in 0..rows {
                        for c in 0..n {
                            s[c] += g[r * n + c] * normalized[r * n + c];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *bias) {
                    for r in 0..rows {
                        for c in 0..n {
                            s[c] += g[r * n + c];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *input) {
                    let nf = n as f64;
                    for r in 0..rows {
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for c in 0..n {
                            let d = g[r * n + c] * gain_v[c];
                            sum_d += d;
                            sum_dh += d * normalized[r * n + c];
                        }
                        for c in 0..n {
                            let d = g[r * n + c] * gain_v[c];
                            s[r * n + c] += inv_std[r] / nf
                                * (nf * d - sum_d - normalized[r * n + c] * sum_dh);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(s) = self.slot(grads, p) {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            s[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(s) = self.slot(grads, p) {
                        axpy(s, &g[offset..offset + len], 1.0);
                    }
                    offset += len;
                }
            }
            Op::GatherRows(a, indices) => {
                let cols = out.cols();
                if let Some(s) = self.slot(grads, *a) {
                    for (r, &i) in indices.iter().enumerate() {
                        s[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::SliceCols(a, start, end) => {
                let cols = self.value(*a).cols();
                let w = end - start;
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..out.rows() {
                        s[r * cols + start..r * cols + end]
                            .iter_mut()
                            .zip(&g[r * w..(r + 1) * w])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    axpy(s, g, 1.0);
                }
            }
            Op::Sum(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                if let Some(s) = self.slot(grads, *a) {
                    s.iter_mut().for_each(|x| *x += g[0] / n);
                }
            }
            Op::GroupMax { input, argmax } => {
                let cols = out.cols();
                if let Some(s) = self.slot(grads, *input) {
                    for (flat, &r) in argmax.iter().enumerate() {
                        s[r * cols + flat % cols] += g[flat];
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                neighbors,
                heads,
                weights,
            } => self.attention_back(*q, *k, *v, neighbors, *heads, weights, g, grads),
            Op::PositionalEncoding { input, dim } => {
                let tp = self.value(*input);
                let freqs = pe_frequencies(*dim);
                let half = dim / 2;
                if let Some(s) = self.slot(grads, *input) {
                    for r in 0..tp.rows() {
                        let row = &out.data()[r * dim..(r + 1) * dim];
                        let gr = &g[r * dim..(r + 1) * dim];
                        for axis in 0..2 {
                            let mut acc = 0.0;
                            for (b, f) in freqs.iter().enumerate() {
                                let base = axis * half + 2 * b;
                                // d sin = f cos, d cos = -f sin
                                acc += gr[base] * f * row[base + 1] - gr[base + 1] * f * row[base];
                            }
                            s[r * 2 + axis] += acc;
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_back(
        &self,
        q: Var,
        k: Var,
        v: Var,
        neighbors: &[Vec<usize>],
        heads: usize,
        weights: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; tq.len()];
        let mut dk = vec![0.0; tk.len()];
        let mut dv = vec![0.0; tv.len()];
        let mut cursor = 0;
        let mut da = Vec::new();
        for (i, nb) in neighbors.iter().enumerate() {
            for h in 0..heads {
                let lo = h * dh;
                let gi = &g[i * d + lo..i * d + lo + dh];
                let w = &weights[cursor..cursor + nb.len()];
                cursor += nb.len();
                da.clear();
                for (&j, &wj) in nb.iter().zip(w) {
                    let vj = &tv.data()[j * d + lo..j * d + lo + dh];
                    da.push(gi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>());
                    dv[j * d + lo..j * d + lo + dh]
                        .iter_mut()
                        .zip(gi)
                        .for_each(|(x, y)| *x += wj * y);
                }
                let dot: f64 = w.iter().zip(&da).map(|(a, b)| a * b).sum();
                let qi = &tq.data()[i * d + lo..i * d + lo + dh];
                for ((&j, &wj), &daj) in nb.iter().zip(w).zip(&da) {
                    let ds = wj * (daj - dot) * scale;
                    let kj = &tk.data()[j * d + lo..j * d + lo + dh];
                    dq[i * d + lo..i * d + lo + dh]
                        .iter_mut()
                        .zip(kj)
                        .for_each(|(x, y)| *x += ds * y);
                    dk[j * d + lo..j * d + lo + dh]
                        .iter_mut()
                        .zip(qi)
                        .for_each(|(x, y)| *x += ds * y);
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(s) = self.slot(grads, var) {
                axpy(s, &buf, 1.0);
            }
        }
    }

    fn elementwise_back(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: Var,
        g: &[f64],
        f: impl Fn(f64, f64, f64) -> f64,
        out: &Tensor,
    ) {
        let x = self.value(a).data();
        if let Some(s) = self.slot(grads, a) {
            for (((d, gi), xi), yi) in s.iter_mut().zip(g).zip(x).zip(out.data()) {
                *d += f(*xi, *yi, *gi);
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }
}

fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
}

pub(crate) fn pe_frequencies(dim: usize) -> Vec<f64> {
    let bands = dim / 4;
    (0..bands)
        .map(|b| {
            if bands == 1 {
                1.0
            } else {
                1000f64.powf(-(b as f64) / (bands - 1) as f64)
            }
        })
        .collect()
}

pub(crate) fn encode_position_into(freqs: &[f64], p: [f64; 2], dst: &mut [f64]) {
    let half = dst.len() / 2;
    for axis in 0..2 {
        for (b, f) in freqs.iter().enumerate() {
            let (s, c) = (p[axis] * f).sin_cos();
            dst[axis * half + 2 * b] = s;
            dst[axis * half + 2 * b + 1] = c;
        }
    }
}

/// Gradients produced by [`Tape::backward`], keyed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// One gradient tensor per parameter in `store` order; parameters the
    /// loss never reached get zeros.
    pub fn for_params(&self, tape: &Tape, store: &ParamStore) -> Vec<Tensor> {
        store
            .iter()
            .map(|(id, p)| {
                let shape = p.tensor.shape().to_vec();
                match tape.param_var(id).and_then(|v| self.get(v)) {
                    Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect()
    }
}
