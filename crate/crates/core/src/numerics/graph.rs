//! Reverse-mode differentiation over a linear tape of tensor ops.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Input,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    // Masked entries have zero probability, so the mask needs no replay.
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    Relu(Var),
    Embedding { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    MeanRows(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One forward pass. Parameter values are copied in when first referenced,
/// so the store can be borrowed mutably for `backward`.
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param(id), p.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_bt(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMulBt(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(row))?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(v, Op::AddRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn softmax_rows(&mut self, x: Var, causal: bool) -> Result<Var> {
        let v = self.value(x).softmax_rows_masked(causal)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Softmax(x), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (v, xhat, inv_std) = self
            .value(x)
            .layer_norm_parts(self.value(gain), self.value(bias))?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).relu();
        let ng = self.ng(x);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let v = self.value(table).embedding_lookup(ids)?;
        let ng = self.ng(table);
        Ok(self.push(
            v,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&vals)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&vals)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x).slice_rows(start, end)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::SliceRows { x, start }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x).slice_cols(start, end)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::SliceCols { x, start }, ng))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).mean_rows()?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::MeanRows(x), ng))
    }

    /// Scalar `Σ_rows -log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        let loss = l.cross_entropy(targets)?;
        let probs = l.softmax_rows()?;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Back-propagates from a scalar and adds `∂loss/∂θ` into the gradient
    /// slot of every trainable parameter reached.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: lv.shape().to_vec(),
                rhs: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Param(id) => store.accumulate_grad(*id, &g)?,
                Op::Input => {}
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.matmul_bt(self.value(*b))?;
                        acc(&mut grads, *a, ga)?;
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).matmul_at(&g)?;
                        acc(&mut grads, *b, gb)?;
                    }
                }
                Op::MatMulBt(a, b) => {
                    if self.ng(*a) {
                        let ga = g.matmul(self.value(*b))?;
                        acc(&mut grads, *a, ga)?;
                    }
                    if self.ng(*b) {
                        let gb = g.matmul_at(self.value(*a))?;
                        acc(&mut grads, *b, gb)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.clone())?;
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g)?;
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        acc(&mut grads, *row, g.sum_rows()?)?;
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g)?;
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.scale(*c))?,
                Op::Softmax(x) => {
                    let y = &node.value;
                    let m = y.cols();
                    let mut out = g.clone();
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = &mut out.data_mut()[i * m..(i + 1) * m];
                        let s: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for (o, &yy) in gr.iter_mut().zip(yr) {
                            *o = yy * (*o - s);
                        }
                    }
                    acc(&mut grads, *x, out)?;
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let m = xhat.cols();
                    let n = xhat.rows();
                    if self.ng(*gain) || self.ng(*bias) {
                        let mut dg = vec![0.0; m];
                        let mut db = vec![0.0; m];
                        for i in 0..n {
                            for j in 0..m {
                                dg[j] += g.get(i, j) * xhat.get(i, j);
                                db[j] += g.get(i, j);
                            }
                        }
                        if self.ng(*gain) {
                            acc(&mut grads, *gain, Tensor::from_rows(1, m, dg)?)?;
                        }
                        if self.ng(*bias) {
                            acc(&mut grads, *bias, Tensor::from_rows(1, m, db)?)?;
                        }
                    }
                    if self.ng(*x) {
                        let gv = self.value(*gain).data();
                        let mut dx = vec![0.0; n * m];
                        for i in 0..n {
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for j in 0..m {
                                let d = g.get(i, j) * gv[j];
                                mean_d += d;
                                mean_dx += d * xhat.get(i, j);
                            }
                            mean_d /= m as f64;
                            mean_dx /= m as f64;
                            for j in 0..m {
                                let d = g.get(i, j) * gv[j];
                                dx[i * m + j] = inv_std[i] * (d - mean_d - xhat.get(i, j) * mean_dx);
                            }
                        }
                        acc(&mut grads, *x, Tensor::from_rows(n, m, dx)?)?;
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut out = g;
                    for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    acc(&mut grads, *x, out)?;
                }
                Op::Embedding { table, ids } => {
                    let tv = self.value(*table);
                    let d = tv.cols();
                    let mut out = Tensor::zeros(tv.rows(), d);
                    for (r, &id) in ids.iter().enumerate() {
                        let src = g.row(r);
                        for (o, s) in out.data_mut()[id * d..(id + 1) * d].iter_mut().zip(src) {
                            *o += s;
                        }
                    }
                    acc(&mut grads, *table, out)?;
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).rows();
                        if self.ng(p) {
                            acc(&mut grads, p, g.slice_rows(start, start + n)?)?;
                        }
                        start += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let m = self.value(p).cols();
                        if self.ng(p) {
                            acc(&mut grads, p, g.slice_cols(start, start + m)?)?;
                        }
                        start += m;
                    }
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let m = xv.cols();
                    let mut out = Tensor::zeros(xv.rows(), m);
                    out.data_mut()[start * m..start * m + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *x, out)?;
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let m = xv.cols();
                    let w = g.cols();
                    let mut out = Tensor::zeros(xv.rows(), m);
                    for i in 0..g.rows() {
                        out.data_mut()[i * m + start..i * m + start + w].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *x, out)?;
                }
                Op::MeanRows(x) => {
                    let n = self.value(*x).rows();
                    let m = g.cols();
                    let row = g.scale(1.0 / n as f64);
                    let mut data = Vec::with_capacity(n * m);
                    for _ in 0..n {
                        data.extend_from_slice(row.data());
                    }
                    acc(&mut grads, *x, Tensor::from_rows(n, m, data)?)?;
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let up = g.item()?;
                    let m = probs.cols();
                    let mut out = probs.scale(up);
                    for (i, &t) in targets.iter().enumerate() {
                        out.data_mut()[i * m + t] -= up;
                    }
                    acc(&mut grads, *logits, out)?;
                }
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
