use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Dense row-major tensor. Every kernel in this crate works on 2-D tensors;
/// scalars are `1 x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape {
                op: "item",
                lhs: self.shape.clone(),
                rhs: vec![1, 1],
            });
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = self.dims2("matmul")?;
        let (k2, m) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            let arow = &self.data[i * k..(i + 1) * k];
            for (p, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// `self · otherᵀ`.
    pub fn matmul_bt(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = self.dims2("matmul_bt")?;
        let (m, k2) = other.dims2("matmul_bt")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_bt",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let brow = &other.data[j * k..(j + 1) * k];
                out[i * m + j] = dot(arow, brow);
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// `selfᵀ · other`.
    pub fn matmul_at(&self, other: &Tensor) -> Result<Tensor> {
        let (k, n) = self.dims2("matmul_at")?;
        let (k2, m) = other.dims2("matmul_at")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_at",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let arow = &self.data[p * n..(p + 1) * n];
            let brow = &other.data[p * m..(p + 1) * m];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (n, m) = self.dims2("transpose")?;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (n, m) = self.dims2("add_row")?;
        let (r, m2) = row.dims2("add_row")?;
        if r != 1 || m != m2 {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.shape.clone(),
                rhs: row.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        for i in 0..n {
            for (o, b) in data[i * m..(i + 1) * m].iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn relu(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        }
    }

    /// Row-wise softmax, stabilized by subtracting the row maximum. With
    /// `causal`, entry `(i, j)` for `j > i` is masked out.
    pub fn softmax_rows_masked(&self, causal: bool) -> Result<Tensor> {
        let (n, m) = self.dims2("softmax_rows")?;
        if causal && n > m {
            return Err(Error::Shape {
                op: "softmax_rows(causal)",
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            let width = if causal { i + 1 } else { m };
            let row = &self.data[i * m..i * m + width];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * m..i * m + width];
            let mut sum = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = libm::exp(v - max);
                sum += *o;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn softmax_rows(&self) -> Result<Tensor> {
        self.softmax_rows_masked(false)
    }

    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let (n, m) = self.dims2("log_softmax_rows")?;
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            let row = &self.data[i * m..(i + 1) * m];
            let lse = log_sum_exp(row);
            for (o, &v) in data[i * m..(i + 1) * m].iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Per-row layer normalization with gain and bias rows.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        Ok(self.layer_norm_parts(gain, bias)?.0)
    }

    /// Returns `(output, normalized input, per-row inverse std)`.
    pub(crate) fn layer_norm_parts(
        &self,
        gain: &Tensor,
        bias: &Tensor,
    ) -> Result<(Tensor, Tensor, Vec<f64>)> {
        let (n, m) = self.dims2("layer_norm")?;
        if gain.shape != [1, m] || bias.shape != [1, m] {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gain.shape.clone(),
            });
        }
        let mut out = vec![0.0; n * m];
        let mut xhat = vec![0.0; n * m];
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = &self.data[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std.push(is);
            for j in 0..m {
                let h = (row[j] - mean) * is;
                xhat[i * m + j] = h;
                out[i * m + j] = h * gain.data[j] + bias.data[j];
            }
        }
        Ok((
            Tensor {
                shape: self.shape.clone(),
                data: out,
            },
            Tensor {
                shape: self.shape.clone(),
                data: xhat,
            },
            inv_std,
        ))
    }

    pub fn embedding_lookup(&self, ids: &[usize]) -> Result<Tensor> {
        let (v, d) = self.dims2("embedding_lookup")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Shape {
                    op: "embedding_lookup",
                    lhs: self.shape.clone(),
                    rhs: vec![id],
                });
            }
            data.extend_from_slice(&self.data[id * d..(id + 1) * d]);
        }
        Tensor::from_rows(ids.len(), d, data)
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Shape {
            op: "concat_rows",
            lhs: vec![],
            rhs: vec![],
        })?;
        let m = first.dims2("concat_rows")?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (n, m2) = p.dims2("concat_rows")?;
            if m2 != m {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            rows += n;
            data.extend_from_slice(&p.data);
        }
        Tensor::from_rows(rows, m, data)
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Shape {
            op: "concat_cols",
            lhs: vec![],
            rhs: vec![],
        })?;
        let n = first.dims2("concat_cols")?.0;
        let mut total = 0;
        for p in parts {
            let (n2, m) = p.dims2("concat_cols")?;
            if n2 != n {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            total += m;
        }
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Tensor::from_rows(n, total, data)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (n, m) = self.dims2("slice_rows")?;
        if start >= end || end > n {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: self.shape.clone(),
                rhs: vec![start, end],
            });
        }
        Tensor::from_rows(end - start, m, self.data[start * m..end * m].to_vec())
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (n, m) = self.dims2("slice_cols")?;
        if start >= end || end > m {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: self.shape.clone(),
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&self.data[i * m + start..i * m + end]);
        }
        Tensor::from_rows(n, w, data)
    }

    pub fn mean_rows(&self) -> Result<Tensor> {
        let (n, m) = self.dims2("mean_rows")?;
        let mut data = vec![0.0; m];
        for i in 0..n {
            for (o, v) in data.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        for o in &mut data {
            *o /= n as f64;
        }
        Tensor::from_rows(1, m, data)
    }

    pub fn sum_rows(&self) -> Result<Tensor> {
        let (n, m) = self.dims2("sum_rows")?;
        let mut data = vec![0.0; m];
        for i in 0..n {
            for (o, v) in data.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        Tensor::from_rows(1, m, data)
    }

    /// Sum over rows of `-log softmax(row)[target]`.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<f64> {
        let (n, m) = self.dims2("cross_entropy")?;
        if targets.len() != n || targets.iter().any(|&t| t >= m) {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: self.shape.clone(),
                rhs: targets.to_vec(),
            });
        }
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = self.row(i);
            loss += log_sum_exp(row) - row[t];
        }
        Ok(loss)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators keep the loop vectorizable with a fixed reduction order.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|&v| libm::exp(v - max)).sum();
    max + libm::log(s)
}
