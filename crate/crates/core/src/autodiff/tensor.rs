use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Every kernel in the crate treats tensors as matrices: rank-0 and rank-1
/// shapes are viewed as `[1, 1]` and `[1, n]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        if shape.len() > 2 {
            return Err(Error::shape(
                "Tensor::new",
                format!("rank {} not supported", shape.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 1.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_matrix(rows, cols, vec![value; rows * cols])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_matrix(1, 1, vec![value])
    }

    pub fn row(values: &[f64]) -> Self {
        Self::from_matrix(1, values.len(), values.to_vec())
    }

    pub fn column(values: &[f64]) -> Self {
        Self::from_matrix(values.len(), 1, values.to_vec())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_matrix(rows.len(), cols, data)
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

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Value of a `[1, 1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.dims(), other.dims());
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_matrix(c, r, out)
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(a: &Self, b: &Self, trans_a: bool, trans_b: bool) -> Self {
        let (ar, ac) = a.dims();
        let (br, bc) = b.dims();
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut out = vec![0.0; m * n];
        if m == 0 || n == 0 {
            return Self::from_matrix(m, n, out);
        }
        // row-major strides for a stored [ar, ac] matrix are (ac, 1)
        let (rsa, csa) = if trans_a { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if trans_b { (1, bc as isize) } else { (bc as isize, 1) };
        // SAFETY: pointers and strides describe the live buffers above, and
        // `out` does not alias either input.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Self::from_matrix(m, n, out)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        Self::matmul_t(self, other, false, false)
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Self {
        let (r, c) = self.dims();
        assert!(start + len <= c, "column slice out of range");
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
        }
        Self::from_matrix(r, len, out)
    }

    pub fn concat_cols(parts: &[&Self]) -> Self {
        let r = parts.first().map_or(0, |p| p.rows());
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                assert_eq!(p.rows(), r, "concat row mismatch");
                out.extend_from_slice(p.row_slice(i));
            }
        }
        Self::from_matrix(r, total, out)
    }

    pub fn concat_rows(parts: &[&Self]) -> Self {
        let c = parts.first().map_or(0, |p| p.cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols(), c, "concat column mismatch");
            data.extend_from_slice(&p.data);
            rows += p.rows();
        }
        Self::from_matrix(rows, c, data)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row_slice(i));
        }
        Self::from_matrix(idx.len(), c, data)
    }

    /// Broadcast a `[1,1]`, `[1,n]` or `[m,1]` tensor to `[rows, cols]`.
    pub fn expand(&self, rows: usize, cols: usize) -> Self {
        let (r, c) = self.dims();
        assert!(
            (r == rows || r == 1) && (c == cols || c == 1),
            "cannot expand {:?} to [{rows}, {cols}]",
            self.dims()
        );
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let ri = if r == 1 { 0 } else { i };
            for j in 0..cols {
                let cj = if c == 1 { 0 } else { j };
                out.push(self.data[ri * c + cj]);
            }
        }
        Self::from_matrix(rows, cols, out)
    }

    /// Sum-reduce to `[rows, cols]`, the adjoint of [`Tensor::expand`].
    pub fn reduce_to(&self, rows: usize, cols: usize) -> Self {
        let (r, c) = self.dims();
        assert!(
            (rows == r || rows == 1) && (cols == c || cols == 1),
            "cannot reduce {:?} to [{rows}, {cols}]",
            self.dims()
        );
        let mut out = vec![0.0; rows * cols];
        for i in 0..r {
            let ri = if rows == 1 { 0 } else { i };
            for j in 0..c {
                let cj = if cols == 1 { 0 } else { j };
                out[ri * cols + cj] += self.data[i * c + j];
            }
        }
        Self::from_matrix(rows, cols, out)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }
}
