//! Tape-based reverse-mode differentiation over vectors and matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Parameters
//! are borrowed from a [`ParamSet`] without copying; [`Graph::backward`]
//! walks the tape in reverse and returns the gradient of every parameter
//! that reached the loss.

use crate::error::{Error, Result};

use super::tensor::{Gradients, ParamId, ParamSet};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Row { table: ParamId, row: usize },
    MatVec(Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Pick(Var, usize),
    Sum(Var),
    Dot(Var, Var),
    WeightedSum(Var, Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    // empty for parameters, which are read from the ParamSet
    value: Vec<f64>,
    requires_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax of a slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `x - log(sum(exp(x)))`.
pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| v - lse).collect()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id).values(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::ShapeMismatch {
                op: "constant",
                left: shape,
                right: vec![values.len()],
            });
        }
        Ok(self.push(Op::Constant, shape, values, false))
    }

    pub fn vector(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(Op::Constant, vec![n], values, false)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.vector(vec![0.0; n])
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let shape = self.params.get(id).shape().to_vec();
        let v = self.push(Op::Param(id), shape, Vec::new(), true);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Row `row` of a matrix parameter (embedding lookup).
    pub fn row(&mut self, table: ParamId, row: usize) -> Result<Var> {
        let t = self.params.get(table);
        let shape = t.shape();
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "row",
                left: shape.to_vec(),
                right: vec![row],
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if row >= rows {
            return Err(Error::IdOutOfRange { id: row, size: rows });
        }
        let value = t.values()[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(Op::Row { table, row }, vec![cols], value, true))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// Matrix `[r, c]` times vector `[c]`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        let (ms, xs) = (self.shape(m), self.shape(x));
        if ms.len() != 2 || xs.len() != 1 || ms[1] != xs[0] {
            return Err(self.mismatch("matvec", m, x));
        }
        let (r, c) = (ms[0], ms[1]);
        let (mv, xv) = (self.value(m), self.value(x));
        let out: Vec<f64> = mv
            .chunks_exact(c)
            .map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        let rg = self.rg(m) || self.rg(x);
        Ok(self.push(Op::MatVec(m, x), vec![r], out, rg))
    }

    /// Matrix `[r, k]` times matrix `[k, c]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(self.mismatch("matmul", a, b));
        }
        let (r, k, c) = (as_[0], as_[1], bs[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * c..(p + 1) * c];
                for (o, bj) in out[i * c..(i + 1) * c].iter_mut().zip(brow) {
                    *o += aip * bj;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), vec![r, c], out, rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<f64>, Vec<usize>, bool)> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok((out, self.shape(a).to_vec(), self.rg(a) || self.rg(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, s, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), s, v, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, s, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), s, v, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, s, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), s, v, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).iter().map(|a| a * c).collect();
        let (s, rg) = (self.shape(x).to_vec(), self.rg(x));
        self.push(Op::Scale(x, c), s, v, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|a| a.tanh()).collect();
        let (s, rg) = (self.shape(x).to_vec(), self.rg(x));
        self.push(Op::Tanh(x), s, v, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|&a| sigmoid(a)).collect();
        let (s, rg) = (self.shape(x).to_vec(), self.rg(x));
        self.push(Op::Sigmoid(x), s, v, rg)
    }

    fn check_vector(&self, op: &'static str, x: Var) -> Result<()> {
        if self.shape(x).len() != 1 || self.shape(x)[0] == 0 {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(x).to_vec(),
                right: vec![],
            });
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_vector("softmax", x)?;
        let v = softmax(self.value(x));
        let (s, rg) = (self.shape(x).to_vec(), self.rg(x));
        Ok(self.push(Op::Softmax(x), s, v, rg))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.check_vector("log_softmax", x)?;
        let v = log_softmax(self.value(x));
        let (s, rg) = (self.shape(x).to_vec(), self.rg(x));
        Ok(self.push(Op::LogSoftmax(x), s, v, rg))
    }

    /// Concatenation of vectors (scalars count as length-1 vectors).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        let mut rg = false;
        for &p in parts {
            if self.shape(p).len() > 1 {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: self.shape(p).to_vec(),
                    right: vec![],
                });
            }
            out.extend_from_slice(self.value(p));
            rg |= self.rg(p);
        }
        let n = out.len();
        Ok(self.push(Op::Concat(parts.to_vec()), vec![n], out, rg))
    }

    /// Element `index` of a vector, as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let n = self.value(x).len();
        if index >= n {
            return Err(Error::IdOutOfRange { id: index, size: n });
        }
        let v = vec![self.value(x)[index]];
        let rg = self.rg(x);
        Ok(self.push(Op::Pick(x, index), vec![], v, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = vec![self.value(x).iter().sum()];
        let rg = self.rg(x);
        self.push(Op::Sum(x), vec![], v, rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _, rg) = self.binary("dot", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Dot(a, b), vec![], vec![v.iter().sum()], rg))
    }

    /// `sum_i weights[i] * items[i]` for a weight vector and equally shaped
    /// item vectors.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        if self.shape(weights) != [items.len()] || items.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                left: self.shape(weights).to_vec(),
                right: vec![items.len()],
            });
        }
        let shape = self.shape(items[0]).to_vec();
        let mut out = vec![0.0; self.value(items[0]).len()];
        let mut rg = self.rg(weights);
        for (i, &item) in items.iter().enumerate() {
            if self.shape(item) != shape.as_slice() {
                return Err(self.mismatch("weighted_sum", items[0], item));
            }
            let w = self.value(weights)[i];
            for (o, x) in out.iter_mut().zip(self.value(item)) {
                *o += w * x;
            }
            rg |= self.rg(item);
        }
        Ok(self.push(Op::WeightedSum(weights, items.to_vec()), shape, out, rg))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if !(shape.is_empty() || shape == [1]) {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut out = Gradients::new(self.params.len());
        if !self.rg(loss) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let buf = out.buffer(*id, g.len());
                    buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Row { table, row } => {
                    let t = self.params.get(*table);
                    let cols = t.shape()[1];
                    let buf = out.buffer(*table, t.len());
                    buf[row * cols..(row + 1) * cols]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::MatVec(m, x) => {
                    let (m, x) = (*m, *x);
                    let c = self.shape(m)[1];
                    let (mv, xv) = (self.value(m), self.value(x));
                    if self.rg(m) {
                        let gm = acc(&mut grads, m, mv.len());
                        for (gi, row) in g.iter().zip(gm.chunks_exact_mut(c)) {
                            if *gi != 0.0 {
                                row.iter_mut().zip(xv).for_each(|(a, xj)| *a += gi * xj);
                            }
                        }
                    }
                    if self.rg(x) {
                        let gx = acc(&mut grads, x, c);
                        for (gi, row) in g.iter().zip(mv.chunks_exact(c)) {
                            if *gi != 0.0 {
                                gx.iter_mut().zip(row).for_each(|(a, mij)| *a += gi * mij);
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (r, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let c = self.shape(b)[1];
                    let (av, bv) = (self.value(a), self.value(b));
                    if self.rg(a) {
                        // dA = G B^T
                        let ga = acc(&mut grads, a, r * k);
                        for i in 0..r {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..c {
                                    s += g[i * c + j] * bv[p * c + j];
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    }
                    if self.rg(b) {
                        // dB = A^T G
                        let gb = acc(&mut grads, b, k * c);
                        for i in 0..r {
                            for p in 0..k {
                                let aip = av[i * k + p];
                                for j in 0..c {
                                    gb[p * c + j] += aip * g[i * c + j];
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                        if self.rg(v) {
                            add_scaled(acc(&mut grads, v, g.len()), &g, sign);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                        if self.rg(v) {
                            add_scaled(acc(&mut grads, v, g.len()), &g, sign);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let bv = self.value(b);
                        let ga = acc(&mut grads, a, g.len());
                        for ((o, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                            *o += gi * bi;
                        }
                    }
                    if self.rg(b) {
                        let av = self.value(a);
                        let gb = acc(&mut grads, b, g.len());
                        for ((o, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                            *o += gi * ai;
                        }
                    }
                }
                Op::Scale(x, c) => add_scaled(acc(&mut grads, *x, g.len()), &g, *c),
                Op::Tanh(x) => {
                    let gx = acc(&mut grads, *x, g.len());
                    for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = acc(&mut grads, *x, g.len());
                    for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
                Op::Softmax(x) => {
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let gx = acc(&mut grads, *x, g.len());
                    for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *o += yi * (gi - dot);
                    }
                }
                Op::LogSoftmax(x) => {
                    let total: f64 = g.iter().sum();
                    let gx = acc(&mut grads, *x, g.len());
                    for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *o += gi - yi.exp() * total;
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if self.rg(p) {
                            add_scaled(acc(&mut grads, p, n), &g[offset..offset + n], 1.0);
                        }
                        offset += n;
                    }
                }
                Op::Pick(x, i) => {
                    let n = self.value(*x).len();
                    acc(&mut grads, *x, n)[*i] += g[0];
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    acc(&mut grads, *x, n).iter_mut().for_each(|o| *o += g[0]);
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let bv = self.value(b);
                        add_scaled(acc(&mut grads, a, bv.len()), bv, g[0]);
                    }
                    if self.rg(b) {
                        let av = self.value(a);
                        add_scaled(acc(&mut grads, b, av.len()), av, g[0]);
                    }
                }
                Op::WeightedSum(w, items) => {
                    let w = *w;
                    if self.rg(w) {
                        let gw: Vec<f64> = items
                            .iter()
                            .map(|&it| self.value(it).iter().zip(&g).map(|(a, b)| a * b).sum())
                            .collect();
                        add_scaled(acc(&mut grads, w, items.len()), &gw, 1.0);
                    }
                    let wv = self.value(w);
                    for (i, &it) in items.iter().enumerate() {
                        if self.rg(it) {
                            add_scaled(acc(&mut grads, it, g.len()), &g, wv[i]);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_scaled(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}
