//! Small dense linear algebra: enough for gate geometry, proposal
//! covariances and least squares on a handful of columns.

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;


use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, found: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, found: other.rows });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, found: v.len() });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch { expected: self.data.len(), found: other.data.len() });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// Thin singular value decomposition by one-sided Jacobi rotations.
    pub fn svd(&self) -> Svd {
        if self.rows >= self.cols {
            jacobi_svd(self)
        } else {
            let t = jacobi_svd(&self.transpose());
            Svd { u: t.v, singular_values: t.singular_values, v: t.u }
        }
    }

    /// Moore–Penrose pseudo-inverse; singular values below
    /// `rel_tol * σ_max` are treated as zero.
    pub fn pinv(&self, rel_tol: f64) -> Matrix {
        let svd = self.svd();
        let cutoff = rel_tol * svd.singular_values.first().copied().unwrap_or(0.0);
        let mut out = Matrix::zeros(self.cols, self.rows);
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= cutoff || s == 0.0 {
                continue;
            }
            for i in 0..self.cols {
                let vik = svd.v[(i, k)] / s;
                for j in 0..self.rows {
                    out[(i, j)] += vik * svd.u[(j, k)];
                }
            }
        }
        out
    }

    /// Numerical rank with the same relative cutoff as [`Matrix::pinv`].
    pub fn rank(&self, rel_tol: f64) -> usize {
        let svd = self.svd();
        let cutoff = rel_tol * svd.singular_values.first().copied().unwrap_or(0.0);
        svd.singular_values.iter().filter(|&&s| s > cutoff && s > 0.0).count()
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(&self) -> Result<Matrix> {
        let n = self.rows;
        if n != self.cols {
            return Err(Error::DimensionMismatch { expected: n, found: self.cols });
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::RankDeficient { rank: j, required: n });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(l)
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `A = U diag(σ) Vᵀ` with σ sorted descending; `U` is rows×r, `V` is
/// cols×r, r = min(rows, cols).
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn jacobi_svd(a: &Matrix) -> Svd {
    let (m, n) = (a.rows, a.cols);
    // Columns are stored contiguously to keep the rotations cache friendly.
    let mut u: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&u[p], &u[p]);
                let beta = dot(&u[q], &u[q]);
                let gamma = dot(&u[p], &u[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut u, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(f64, usize)> = u.iter().enumerate().map(|(j, col)| (dot(col, col).sqrt(), j)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0));
    let mut um = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut sv = Vec::with_capacity(n);
    for (k, &(s, j)) in order.iter().enumerate() {
        sv.push(s);
        for i in 0..m {
            um[(i, k)] = if s > 0.0 { u[j][i] / s } else { 0.0 };
        }
        for i in 0..n {
            vm[(i, k)] = v[j][i];
        }
    }
    Svd { u: um, singular_values: sv, v: vm }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Solves the least-squares problem `min ‖A β − y‖` with a small ridge
/// added to the normal equations.
pub fn least_squares(a: &Matrix, y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if a.rows != y.len() {
        return Err(Error::DimensionMismatch { expected: a.rows, found: y.len() });
    }
    let p = a.cols;
    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    for i in 0..a.rows {
        let r = a.row(i);
        for j in 0..p {
            rhs[j] += r[j] * y[i];
            for k in 0..p {
                gram[(j, k)] += r[j] * r[k];
            }
        }
    }
    for j in 0..p {
        gram[(j, j)] += ridge;
    }
    let l = gram.cholesky()?;
    Ok(cholesky_solve(&l, &rhs))
}

/// Solves `L Lᵀ x = b`.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(svd: &Svd) -> Matrix {
        let r = svd.singular_values.len();
        let mut us = svd.u.clone();
        for i in 0..us.rows() {
            for k in 0..r {
                us[(i, k)] *= svd.singular_values[k];
            }
        }
        us.matmul(&svd.v.transpose()).unwrap()
    }

    #[test]
    fn svd_reconstructs_wide_and_tall() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 0.5, -1.0], vec![0.3, -0.7, 2.0, 1.0]]).unwrap();
        for m in [a.clone(), a.transpose()] {
            let svd = m.svd();
            assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
            let back = reconstruct(&svd);
            assert!(m.sub(&back).unwrap().frobenius_norm() < 1e-13);
        }
    }

    #[test]
    fn pinv_of_full_row_rank_is_right_inverse() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 1.0, -1.0]]).unwrap();
        let p = a.pinv(1e-12);
        let eye = a.matmul(&p).unwrap();
        assert!(eye.sub(&Matrix::identity(2)).unwrap().frobenius_norm() < 1e-13);
    }

    #[test]
    fn rank_detects_collinear_rows() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        assert_eq!(a.rank(1e-8), 1);
    }

    #[test]
    fn least_squares_recovers_exact_line() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let beta = least_squares(&a, &[1.0, 3.0, 5.0], 0.0).unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-12 && (beta[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(a.cholesky().is_err());
    }
}
