//! Dense row-major matrices and the handful of kernels the exact layer needs:
//! matrix-vector products, partial-pivot Gaussian elimination, and an
//! M-matrix test used as a spectral-radius guard for substochastic blocks.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Index, IndexMut};

/// Dense row-major `rows x cols` matrix of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from nested rows. Returns `None` when rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return None;
        }
        Some(Self {
            rows: n,
            cols: m,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// `A v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Row vector times matrix, `v^T A`.
    pub fn vec_mul(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += vi * a;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
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
        out
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

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Principal submatrix on the given index set (in the given order).
    pub fn principal(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

/// Solves `A X = B` for a square `A` by Gaussian elimination with partial
/// pivoting. `rhs` holds the columns of `B`. Returns `None` on a pivot below
/// `1e-300` in magnitude or relative to the column scale.
pub fn solve(a: &Matrix, rhs: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    assert!(a.is_square());
    let n = a.rows();
    let k = rhs.len();
    let mut m = a.clone();
    let mut b: Vec<Vec<f64>> = (0..n).map(|i| rhs.iter().map(|c| c[i]).collect()).collect();
    let scale = a.iter().fold(0.0_f64, |s, x| s.max(x.abs())).max(1e-300);
    for col in 0..n {
        let (piv, pval) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if !(pval > 1e-14 * scale) {
            return None;
        }
        if piv != col {
            for j in 0..n {
                let t = m[(col, j)];
                m[(col, j)] = m[(piv, j)];
                m[(piv, j)] = t;
            }
            b.swap(col, piv);
        }
        let d = m[(col, col)];
        for r in col + 1..n {
            let f = m[(r, col)] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[(r, j)] -= f * m[(col, j)];
            }
            for c in 0..k {
                b[r][c] -= f * b[col][c];
            }
        }
    }
    let mut x = vec![vec![0.0; n]; k];
    for c in 0..k {
        for i in (0..n).rev() {
            let mut s = b[i][c];
            for j in i + 1..n {
                s -= m[(i, j)] * x[c][j];
            }
            x[c][i] = s / m[(i, i)];
        }
    }
    Some(x)
}

/// Single right-hand side convenience wrapper around [`solve`].
pub fn solve_vec(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    solve(a, &[b.to_vec()]).map(|mut v| v.remove(0))
}

/// True iff the nonnegative matrix `b` has spectral radius strictly below
/// `bound`.
///
/// `bound * I - B` is a Z-matrix; it is a nonsingular M-matrix (equivalently
/// `rho(B) < bound`) iff every leading principal minor is positive, i.e.
/// unpivoted elimination produces only positive pivots.
pub fn spectral_radius_below(b: &Matrix, bound: f64) -> bool {
    assert!(b.is_square());
    let n = b.rows();
    let mut m = b.scale(-1.0);
    for i in 0..n {
        m[(i, i)] += bound;
    }
    for col in 0..n {
        let d = m[(col, col)];
        if !(d > 0.0) {
            return false;
        }
        for r in col + 1..n {
            let f = m[(r, col)] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[(r, j)] -= f * m[(col, j)];
            }
        }
    }
    true
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `y += a * x`.
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_small_system() {
        let a = Matrix::from_rows(&[vec![0.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let x = solve_vec(&a, &[4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_system_is_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(solve_vec(&a, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn radius_guard() {
        let b = Matrix::from_rows(&[vec![0.8]]).unwrap();
        assert!(spectral_radius_below(&b, 1.0));
        assert!(!spectral_radius_below(&b, 0.8));
        // rho = 1 for a 2-cycle with unit weights
        let c = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(!spectral_radius_below(&c, 1.0));
        assert!(spectral_radius_below(&c, 1.0 + 1e-9));
        assert!(spectral_radius_below(&Matrix::zeros(0, 0), 1.0));
    }
}
