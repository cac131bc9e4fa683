//! Small dense linear algebra: thin SVD, leading eigenpairs of symmetric
//! matrices, and Gram-Schmidt orthonormalization.

use crate::tensor::{dot, Tensor};

/// Thin singular value decomposition `M = U diag(s) Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `m x p` with orthonormal columns, `p = min(m, n)`.
    pub u: Tensor,
    /// Descending, non-negative.
    pub s: Vec<f64>,
    /// `n x p` with orthonormal columns.
    pub v: Tensor,
}

/// One-sided (Hestenes) Jacobi SVD. Columns belonging to zero singular values
/// are completed to an orthonormal set, so `U` and `V` are always orthonormal.
pub fn svd(m: &Tensor) -> Svd {
    let (rows, cols) = (m.rows(), m.cols());
    if rows < cols {
        let t = svd(&m.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    // Work column-major: a[j] is column j of M, v[j] is column j of V.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let tol = 1e-15;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let zero_tol = scale * 1e-14 * rows.max(cols) as f64;
    let mut s = Vec::with_capacity(cols);
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut vcols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        vcols.push(v[j].clone());
        if norms[j] > zero_tol {
            s.push(norms[j]);
            ucols.push(a[j].iter().map(|x| x / norms[j]).collect());
        } else {
            s.push(0.0);
            ucols.push(vec![0.0; rows]);
            missing.push(slot);
        }
    }
    complete_basis(&mut ucols, &missing);
    Svd {
        u: columns_to_tensor(&ucols, rows),
        s,
        v: columns_to_tensor(&vcols, cols),
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to all others.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let dim = cols[0].len();
    let mut candidate = 0;
    for &slot in missing {
        loop {
            let mut e = vec![0.0; dim];
            e[candidate % dim] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (j, col) in cols.iter().enumerate() {
                    if j == slot || (missing.contains(&j) && dot(col, col) == 0.0) {
                        continue;
                    }
                    let proj = dot(&e, col);
                    for (x, c) in e.iter_mut().zip(col) {
                        *x -= proj * c;
                    }
                }
            }
            let n = dot(&e, &e).sqrt();
            if n > 1e-6 {
                cols[slot] = e.iter().map(|x| x / n).collect();
                break;
            }
        }
    }
}

fn columns_to_tensor(cols: &[Vec<f64>], rows: usize) -> Tensor {
    let mut data = vec![0.0; rows * cols.len()];
    for (j, col) in cols.iter().enumerate() {
        for (i, x) in col.iter().enumerate() {
            data[i * cols.len() + j] = *x;
        }
    }
    Tensor::from_parts(vec![rows, cols.len()], data)
}

/// The `count` largest eigenvalues (descending) of the symmetric `n x n`
/// row-major matrix `a`, with unit eigenvectors.
///
/// Householder reduction to tridiagonal form, bisection on Sturm counts for
/// the eigenvalues, inverse iteration for the eigenvectors, then the
/// Householder back-transformation. Only the requested pairs are computed,
/// which is what makes many local tangent estimates affordable.
pub fn symmetric_top_eigen(a: &[f64], n: usize, count: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(a.len(), n * n);
    let count = count.min(n);
    let mut work = a.to_vec();
    let (diag, off, reflectors) = tridiagonalize(&mut work, n);

    let norm = diag
        .iter()
        .enumerate()
        .map(|(i, d)| {
            d.abs() + if i > 0 { off[i - 1].abs() } else { 0.0 } + off.get(i).map_or(0.0, |e| e.abs())
        })
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);

    let mut values = Vec::with_capacity(count);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
    for j in 0..count {
        // j-th largest = eigenvalue with exactly n-1-j eigenvalues below it.
        let lambda = kth_eigenvalue(&diag, &off, n - 1 - j, norm);
        let mut z = inverse_iteration(&diag, &off, lambda, norm, j as u64);
        // Orthogonalize against eigenvectors of nearby eigenvalues.
        for (prev_val, prev_vec) in values.iter().zip(&vectors) {
            if (prev_val - lambda).abs() <= 1e-3 * norm {
                let p = dot(&z, prev_vec);
                for (x, y) in z.iter_mut().zip(prev_vec) {
                    *x -= p * y;
                }
            }
        }
        let nz = dot(&z, &z).sqrt();
        if nz > 0.0 {
            z.iter_mut().for_each(|x| *x /= nz);
        }
        values.push(lambda);
        vectors.push(z);
    }
    let vectors = vectors
        .into_iter()
        .map(|z| back_transform(&reflectors, z))
        .collect();
    (values, vectors)
}

/// Reduces `a` in place; returns the diagonal, the sub-diagonal and the
/// Householder vectors `(start, v)` with `H = I − 2vvᵀ` acting on `start..n`.
#[allow(clippy::type_complexity)]
fn tridiagonalize(a: &mut [f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<(usize, Vec<f64>)>) {
    let mut reflectors = Vec::new();
    let mut off = vec![0.0; n.saturating_sub(1)];
    for k in 0..n.saturating_sub(2) {
        let start = k + 1;
        let m = n - start;
        let x: Vec<f64> = (start..n).map(|i| a[i * n + k]).collect();
        let xnorm = dot(&x, &x).sqrt();
        if xnorm == 0.0 {
            off[k] = 0.0;
            continue;
        }
        let alpha = if x[0] > 0.0 { -xnorm } else { xnorm };
        let mut v = x;
        v[0] -= alpha;
        // alpha has the opposite sign of x[0], so v cannot vanish.
        let vnorm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|t| *t /= vnorm);
        // p = A_sub v, q = p − (vᵀp) v, A_sub ← A_sub − 2vqᵀ − 2qvᵀ
        let mut p = vec![0.0; m];
        for (r, pr) in p.iter_mut().enumerate() {
            let row = &a[(start + r) * n + start..(start + r) * n + n];
            *pr = dot(row, &v);
        }
        let kk = dot(&v, &p);
        let q: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| pi - kk * vi).collect();
        for r in 0..m {
            let row = &mut a[(start + r) * n + start..(start + r) * n + n];
            let (vr, qr) = (v[r], q[r]);
            for (c, x) in row.iter_mut().enumerate() {
                *x -= 2.0 * (vr * q[c] + qr * v[c]);
            }
        }
        off[k] = alpha;
        for i in start..n {
            a[i * n + k] = 0.0;
            a[k * n + i] = 0.0;
        }
        a[start * n + k] = alpha;
        a[k * n + start] = alpha;
        reflectors.push((start, v));
    }
    if n >= 2 {
        off[n - 2] = a[(n - 1) * n + (n - 2)];
    }
    let diag = (0..n).map(|i| a[i * n + i]).collect();
    (diag, off, reflectors)
}

fn back_transform(reflectors: &[(usize, Vec<f64>)], mut z: Vec<f64>) -> Vec<f64> {
    for (start, v) in reflectors.iter().rev() {
        let s = dot(&z[*start..], v);
        for (x, vi) in z[*start..].iter_mut().zip(v) {
            *x -= 2.0 * s * vi;
        }
    }
    z
}

/// Number of eigenvalues of the tridiagonal matrix strictly below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64, pivmin: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q.abs() < pivmin {
        q = -pivmin;
    }
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        q = diag[i] - x - off[i - 1] * off[i - 1] / q;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Eigenvalue with exactly `below` eigenvalues smaller than it (0-based rank).
fn kth_eigenvalue(diag: &[f64], off: &[f64], below: usize, norm: f64) -> f64 {
    let pivmin = f64::MIN_POSITIVE.max(norm * 1e-300);
    let (mut lo, mut hi) = (-norm * 1.01 - 1e-300, norm * 1.01 + 1e-300);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 2.0 * f64::EPSILON * norm {
            break;
        }
        if sturm_count(diag, off, mid, pivmin) > below {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn inverse_iteration(diag: &[f64], off: &[f64], lambda: f64, norm: f64, salt: u64) -> Vec<f64> {
    let n = diag.len();
    if n == 1 {
        return vec![1.0];
    }
    // Deterministic, non-degenerate start vector.
    let mut z: Vec<f64> = (0..n)
        .map(|i| {
            let h = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xBF58_476D_1CE4_E5B9);
            0.5 + (h >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    let shift = lambda + norm * f64::EPSILON * 4.0;
    for _ in 0..4 {
        z = solve_shifted_tridiagonal(diag, off, shift, norm, z);
        let nz = dot(&z, &z).sqrt();
        if nz == 0.0 || !nz.is_finite() {
            break;
        }
        z.iter_mut().for_each(|x| *x /= nz);
    }
    z
}

/// Solves `(T − shift·I) x = b` by Gaussian elimination with partial pivoting.
fn solve_shifted_tridiagonal(diag: &[f64], off: &[f64], shift: f64, norm: f64, mut b: Vec<f64>) -> Vec<f64> {
    let n = diag.len();
    let tiny = norm * f64::EPSILON;
    let mut d: Vec<f64> = diag.iter().map(|x| x - shift).collect();
    let mut dl = off.to_vec();
    let mut du = off.to_vec();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    for i in 0..n - 1 {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                d[i] = tiny;
            }
            let fact = dl[i] / d[i];
            d[i + 1] -= fact * du[i];
            b[i + 1] -= fact * b[i];
            if i < n - 2 {
                du2[i] = 0.0;
            }
        } else {
            let fact = d[i] / dl[i];
            d[i] = dl[i];
            let temp = d[i + 1];
            d[i + 1] = du[i] - fact * temp;
            if i < n - 2 {
                du2[i] = du[i + 1];
                du[i + 1] = -fact * du2[i];
            }
            du[i] = temp;
            let tb = b[i];
            b[i] = b[i + 1];
            b[i + 1] = tb - fact * b[i + 1];
        }
        dl[i] = 0.0;
    }
    if d[n - 1] == 0.0 {
        d[n - 1] = tiny;
    }
    b[n - 1] /= d[n - 1];
    b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
    for i in (0..n.saturating_sub(2)).rev() {
        b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
    }
    b
}

/// Two passes of modified Gram-Schmidt. Vectors whose residual norm falls
/// below `tol` times their original norm are zeroed; returns how many
/// independent vectors survived.
pub fn orthonormalize(vectors: &mut [Vec<f64>], tol: f64) -> usize {
    let mut rank = 0;
    for i in 0..vectors.len() {
        let original = dot(&vectors[i], &vectors[i]).sqrt();
        let (done, rest) = vectors.split_at_mut(i);
        let v = &mut rest[0];
        for _ in 0..2 {
            for q in done.iter() {
                let p = dot(v, q);
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= p * y;
                }
            }
        }
        let nv = dot(v, v).sqrt();
        if original > 0.0 && nv > tol * original {
            v.iter_mut().for_each(|x| *x /= nv);
            rank += 1;
        } else {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    rank
}
