//! Dense row-major `f64` arrays.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from external data, rejecting empty dimensions,
    /// length mismatches and non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for buffers produced by our own arithmetic.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// A `1 x n` row.
    pub fn row_vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![1, n], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1, 1], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
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

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Row count when viewed as a matrix (leading dimension).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count when viewed as a matrix (product of trailing dimensions).
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product::<usize>().max(1)
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let cols = self.cols();
        self.data[row * cols + col] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: self.shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Stacks the selected rows into a new `len(indices) x cols` matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::from_parts(vec![indices.len(), c], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_parts(vec![c, r], out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_shape(other.shape())?;
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                found: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product of the 2-d views, `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        matmul_flags(self, other, false, false)
    }
}

/// `op(a) · op(b)` where `op` optionally transposes. Both operands are read as
/// `rows x cols` matrices.
pub fn matmul_flags(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor> {
    let (ar, ac) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::ShapeMismatch {
            expected: vec![k, n],
            found: vec![k2, n],
        });
    }
    let mut out = vec![0.0; m * n];
    if m == 1 || n == 1 || k == 1 {
        small_matmul(a, b, trans_a, trans_b, (m, k, n), &mut out);
        return Ok(Tensor::from_parts(vec![m, n], out));
    }
    let (rsa, csa) = if trans_a { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if trans_b { (1, bc as isize) } else { (bc as isize, 1) };
    // SAFETY: strides describe the row-major buffers of `a`, `b` and `out`,
    // whose lengths are rows * cols as checked by the Tensor invariants.
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
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Vector-matrix, matrix-vector and outer products without the packing
/// overhead of the blocked kernel (which copies both operands per call).
fn small_matmul(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool, (m, k, n): (usize, usize, usize), out: &mut [f64]) {
    let (ac, bc) = (a.cols(), b.cols());
    let at = |i: usize, p: usize| if trans_a { a.data[p * ac + i] } else { a.data[i * ac + p] };
    let bt = |p: usize, j: usize| if trans_b { b.data[j * bc + p] } else { b.data[p * bc + j] };
    if k == 1 {
        for i in 0..m {
            let ai = at(i, 0);
            for (j, o) in out[i * n..(i + 1) * n].iter_mut().enumerate() {
                *o = ai * bt(0, j);
            }
        }
    } else if m == 1 {
        if trans_b {
            // rows of b are contiguous
            for (j, o) in out.iter_mut().enumerate() {
                let row = &b.data[j * bc..(j + 1) * bc];
                *o = (0..k).map(|p| at(0, p) * row[p]).sum();
            }
        } else {
            for p in 0..k {
                let ap = at(0, p);
                if ap == 0.0 {
                    continue;
                }
                for (o, bv) in out.iter_mut().zip(&b.data[p * bc..(p + 1) * bc]) {
                    *o += ap * bv;
                }
            }
        }
    } else if !trans_a {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &a.data[i * ac..(i + 1) * ac];
            *o = (0..k).map(|p| row[p] * bt(p, 0)).sum();
        }
    } else {
        for p in 0..k {
            let bp = bt(p, 0);
            for (i, o) in out.iter_mut().enumerate() {
                *o += a.data[p * ac + i] * bp;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Tensor::new(vec![2, 0], vec![]),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn matmul_with_transposes_matches_naive() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
        let at = a.transpose();
        let bt = b.transpose();
        assert_eq!(matmul_flags(&at, &b, true, false).unwrap(), c);
        assert_eq!(matmul_flags(&a, &bt, false, true).unwrap(), c);
        assert_eq!(matmul_flags(&at, &bt, true, true).unwrap(), c);
    }

    #[test]
    fn vector_and_outer_products_match_naive() {
        let mut seed = 1u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for (m, k, n) in [(1, 5, 4), (4, 5, 1), (3, 1, 4), (1, 1, 1), (1, 6, 1), (2, 3, 4)] {
            let a = Tensor::matrix(m, k, (0..m * k).map(|_| next()).collect()).unwrap();
            let b = Tensor::matrix(k, n, (0..k * n).map(|_| next()).collect()).unwrap();
            let mut naive = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    naive[i * n + j] = (0..k).map(|p| a.get(i, p) * b.get(p, j)).sum();
                }
            }
            for ta in [false, true] {
                for tb in [false, true] {
                    let aa = if ta { a.transpose() } else { a.clone() };
                    let bb = if tb { b.transpose() } else { b.clone() };
                    let c = matmul_flags(&aa, &bb, ta, tb).unwrap();
                    assert_eq!(c.shape(), &[m, n]);
                    for (x, y) in c.data().iter().zip(&naive) {
                        assert!((x - y).abs() < 1e-14, "{m}x{k}x{n} {ta} {tb}");
                    }
                }
            }
        }
    }

    #[test]
    fn matmul_dimension_error() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn gather_and_transpose() {
        let t = Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.gather_rows(&[2, 0]).data(), &[5., 6., 1., 2.]);
        assert_eq!(t.transpose().data(), &[1., 3., 5., 2., 4., 6.]);
    }
}
