//! Dense row-major 2-D arrays of `f64`.
//!
//! All batches flowing through the networks (inputs, embeddings, class
//! distributions, regressor outputs) are `Tensor2` values with one example per
//! row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::invalid(format!(
                "tensor {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a tensor from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, zero-width tensors yield empty rows instead
        let cols = self.cols;
        (0..self.rows).map(move |r| &self.data[r * cols..(r + 1) * cols])
    }

    /// Gathers the given rows into a new tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Copies columns `[start, start + width)` into a new tensor.
    pub fn column_block(&self, start: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(self.rows * width);
        for r in self.iter_rows() {
            data.extend_from_slice(&r[start..start + width]);
        }
        Self {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Per-column sums, length `cols`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        self.gemm(false, other, false)
    }

    /// `op(self) · op(other)` where `op` optionally transposes.
    pub fn gemm(&self, transpose_self: bool, other: &Tensor2, transpose_other: bool) -> Result<Tensor2> {
        gemm_raw(
            &self.data,
            self.shape(),
            transpose_self,
            &other.data,
            other.shape(),
            transpose_other,
        )
    }
}

/// `op(a) · op(b)` over row-major buffers with the given (rows, cols) shapes.
pub(crate) fn gemm_raw(
    a: &[f64],
    a_shape: (usize, usize),
    transpose_a: bool,
    b: &[f64],
    b_shape: (usize, usize),
    transpose_b: bool,
) -> Result<Tensor2> {
    assert_eq!(a.len(), a_shape.0 * a_shape.1);
    assert_eq!(b.len(), b_shape.0 * b_shape.1);
    let (m, k) = if transpose_a { (a_shape.1, a_shape.0) } else { a_shape };
    let (k2, n) = if transpose_b { (b_shape.1, b_shape.0) } else { b_shape };
    if k != k2 {
        return Err(Error::config(format!(
            "matmul inner dimension mismatch: {m}x{k} by {k2}x{n}"
        )));
    }
    let mut out = Tensor2::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(out);
    }
    let (rsa, csa) = if transpose_a {
        (1, a_shape.1 as isize)
    } else {
        (a_shape.1 as isize, 1)
    };
    let (rsb, csb) = if transpose_b {
        (1, b_shape.1 as isize)
    } else {
        (b_shape.1 as isize, 1)
    };
    // SAFETY: strides describe the exact row-major layouts of the three
    // buffers, whose lengths are asserted above (m*n for the output).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor2, b: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn transpose(a: &Tensor2) -> Tensor2 {
        let mut t = Tensor2::zeros(a.cols(), a.rows());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                t.set(j, i, a.get(i, j));
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_for_all_transpose_combinations() {
        let a = Tensor2::from_vec(3, 4, (0..12).map(|v| v as f64 * 0.5 - 2.0).collect()).unwrap();
        let b = Tensor2::from_vec(4, 2, (0..8).map(|v| (v as f64).sin()).collect()).unwrap();
        let expected = naive(&a, &b);
        let at = transpose(&a);
        let bt = transpose(&b);
        for (x, tx, y, ty) in [
            (&a, false, &b, false),
            (&at, true, &b, false),
            (&a, false, &bt, true),
            (&at, true, &bt, true),
        ] {
            let got = x.gemm(tx, y, ty).unwrap();
            for (g, e) in got.as_slice().iter().zip(expected.as_slice()) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        assert!(Tensor2::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        let a = Tensor2::zeros(2, 3);
        assert!(a.matmul(&Tensor2::zeros(2, 3)).is_err());
    }
}
