//! Dense row-major `f64` tensors of rank 1 to 3 and the pure kernels the
//! forecaster needs. Every kernel here is a plain function of its inputs;
//! the tape in [`super::tape`] records calls to them and supplies adjoints.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data.len()` is the product of `shape`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 || shape.iter().any(|&e| e == 0) {
            return Err(Error::Contract(format!(
                "tensor shape must have 1-3 positive extents, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim("tensor", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("valid zero shape")
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel]).expect("valid fill shape")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Tensor::new(&[rows.len(), cols], rows.concat())
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Rows of a rank-2 tensor (rank-1 tensors count as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Tensor::new(shape, self.data.clone())
    }

    /// Copies rows `lo..hi` of a matrix.
    pub fn slice_rows(&self, lo: usize, hi: usize) -> Result<Tensor> {
        self.require_matrix("slice_rows")?;
        if lo >= hi || hi > self.rows() {
            return Err(Error::Contract(format!(
                "row range {lo}..{hi} invalid for {} rows",
                self.rows()
            )));
        }
        let c = self.cols();
        Tensor::new(&[hi - lo, c], self.data[lo * c..hi * c].to_vec())
    }

    /// Overwrites rows starting at `lo` with the rows of `src`.
    pub fn set_rows(&mut self, lo: usize, src: &Tensor) -> Result<()> {
        if src.cols() != self.cols() || lo + src.rows() > self.rows() {
            return Err(Error::dim("set_rows", &self.shape, &src.shape));
        }
        let c = self.cols();
        self.data[lo * c..(lo + src.rows()) * c].copy_from_slice(&src.data);
        Ok(())
    }

    /// Sum of squared entries.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn require_matrix(&self, op: &'static str) -> Result<()> {
        if self.shape.len() != 2 {
            return Err(Error::dim(op, &self.shape, &[]));
        }
        Ok(())
    }

    fn require_same(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// `C = A·B` for matrices `m×k` and `k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a.data[i * k + t];
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[t * n..(t + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    a.require_matrix("transpose")?;
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(&[n, m], out)
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Row-wise softmax with max subtraction.
pub fn row_softmax(a: &Tensor) -> Result<Tensor> {
    a.require_matrix("row_softmax")?;
    let n = a.cols();
    let mut out = a.data.clone();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(a.shape(), out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.require_same("add", b)?;
    Ok(a.zip_map(b, |x, y| x + y))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.require_same("sub", b)?;
    Ok(a.zip_map(b, |x, y| x - y))
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    a.map(|v| v * c)
}

pub fn abs(a: &Tensor) -> Tensor {
    a.map(f64::abs)
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum())
}

pub fn mean(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum::<f64>() / a.numel() as f64)
}

pub fn sum_squares(a: &Tensor) -> Tensor {
    Tensor::scalar(a.norm_sq())
}

/// Extents `(nodes, batch, in_width, out_width)` of a [`node_affine`] call,
/// validated against each other.
pub(crate) fn node_affine_dims(
    h: &Tensor,
    theta: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize, usize, usize)> {
    if theta.rank() != 3 || h.rank() != 2 || bias.rank() != 2 {
        return Err(Error::dim("node_affine", h.shape(), theta.shape()));
    }
    let (n, c, f) = (theta.shape[0], theta.shape[1], theta.shape[2]);
    if h.rows() != n || h.cols() % c != 0 {
        return Err(Error::dim("node_affine", h.shape(), theta.shape()));
    }
    if bias.shape() != [n, f] {
        return Err(Error::dim("node_affine", bias.shape(), theta.shape()));
    }
    Ok((n, h.cols() / c, c, f))
}

/// Per-node affine map over a batch laid out side by side in columns.
///
/// `h` is `N×(B·C)`, `theta` is `N×C×F`, `bias` is `N×F`; the result is
/// `N×(B·F)` with `out[i, b·F+f] = bias[i,f] + Σ_c h[i, b·C+c]·theta[i,c,f]`.
/// Node `i` only ever touches its own slice `theta[i]`.
pub fn node_affine(h: &Tensor, theta: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, batch, c, f) = node_affine_dims(h, theta, bias)?;
    let mut out = vec![0.0; n * batch * f];
    for i in 0..n {
        let th = &theta.data[i * c * f..(i + 1) * c * f];
        let bi = &bias.data[i * f..(i + 1) * f];
        for b in 0..batch {
            let hrow = &h.data[i * batch * c + b * c..i * batch * c + (b + 1) * c];
            let orow = &mut out[i * batch * f + b * f..i * batch * f + (b + 1) * f];
            orow.copy_from_slice(bi);
            for (ci, &hv) in hrow.iter().enumerate() {
                if hv == 0.0 {
                    continue;
                }
                for (o, &w) in orow.iter_mut().zip(&th[ci * f..(ci + 1) * f]) {
                    *o += hv * w;
                }
            }
        }
    }
    Tensor::new(&[n, batch * f], out)
}
