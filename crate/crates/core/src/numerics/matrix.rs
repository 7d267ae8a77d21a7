use serde::{Deserialize, Serialize};

use super::vector::dot;
use super::{Scalar, Vector};
use crate::error::{ensure_dim, Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Matrix<S: Scalar> {
    rows: usize,
    cols: usize,
    values: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn new(rows: usize, cols: usize, values: Vec<S>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract("matrix dimensions must be positive"));
        }
        ensure_dim("matrix storage", rows * cols, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            values: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, S::one());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.values[r * cols + c] = f(r, c);
            }
        }
        m
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vector<S>]) -> Result<Self> {
        let first = columns
            .first()
            .ok_or_else(|| Error::contract("from_columns needs at least one column"))?;
        let rows = first.dim();
        for c in columns {
            ensure_dim("from_columns", rows, c.dim())?;
        }
        Ok(Self::from_fn(rows, columns.len(), |r, c| columns[c][r]))
    }

    pub fn diagonal(diag: &[S]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
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
    pub fn get(&self, r: usize, c: usize) -> S {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.values[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vector<S> {
        Vector::from_raw((0..self.rows).map(|r| self.get(r, c)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self · x`
    pub fn matvec(&self, x: &Vector<S>) -> Result<Vector<S>> {
        ensure_dim("matvec", self.cols, x.dim())?;
        Ok(Vector::from_raw(
            (0..self.rows)
                .map(|r| dot(self.row(r), x.as_slice()))
                .collect(),
        ))
    }

    /// `selfᵀ · y`
    pub fn matvec_transposed(&self, y: &Vector<S>) -> Result<Vector<S>> {
        ensure_dim("matvec_transposed", self.rows, y.dim())?;
        let mut out = vec![S::zero(); self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == S::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * yr;
            }
        }
        Ok(Vector::from_raw(out))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        ensure_dim("matmul", self.cols, other.rows)?;
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == S::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.values[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        ensure_dim("matrix add rows", self.rows, other.rows)?;
        ensure_dim("matrix add cols", self.cols, other.cols)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn scale(&self, factor: S) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| v * factor).collect(),
        }
    }

    /// `self += alpha · u vᵀ`
    pub fn add_outer(&mut self, alpha: S, u: &Vector<S>, v: &Vector<S>) -> Result<()> {
        ensure_dim("add_outer rows", self.rows, u.dim())?;
        ensure_dim("add_outer cols", self.cols, v.dim())?;
        for (r, &ur) in u.iter().enumerate() {
            let a = alpha * ur;
            if a == S::zero() {
                continue;
            }
            let dst = &mut self.values[r * self.cols..(r + 1) * self.cols];
            for (d, &vc) in dst.iter_mut().zip(v.iter()) {
                *d += a * vc;
            }
        }
        Ok(())
    }

    pub fn trace(&self) -> S {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Largest `|a_ij − a_ji|`; `None` for non-square matrices.
    pub fn asymmetry(&self) -> Option<S> {
        if !self.is_square() {
            return None;
        }
        let mut worst = S::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        Some(worst)
    }

    /// `(A + Aᵀ) / 2`
    pub fn symmetrized(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::contract("symmetrize needs a square matrix"));
        }
        let half = S::lit(0.5);
        Ok(Self::from_fn(self.rows, self.cols, |i, j| {
            (self.get(i, j) + self.get(j, i)) * half
        }))
    }

    /// Numerical column rank via modified Gram-Schmidt with relative tolerance `tol`.
    pub fn column_rank(&self, tol: S) -> usize {
        let mut basis: Vec<Vec<S>> = Vec::new();
        let scale = self
            .values
            .iter()
            .fold(S::zero(), |m, v| m.max(v.abs()))
            .max(S::min_positive_value());
        for c in 0..self.cols {
            let mut col: Vec<S> = (0..self.rows).map(|r| self.get(r, c)).collect();
            for b in &basis {
                let p = dot(&col, b);
                for (x, &y) in col.iter_mut().zip(b) {
                    *x -= p * y;
                }
            }
            let n = dot(&col, &col).sqrt();
            if n > tol * scale {
                col.iter_mut().for_each(|x| *x /= n);
                basis.push(col);
            }
        }
        basis.len()
    }

    pub fn cast<T: Scalar>(&self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| T::lit(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree() {
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = Vector::new(vec![1.0, 0.0, -1.0]).unwrap();
        assert_eq!(m.matvec(&x).unwrap().as_slice(), &[-2.0, -2.0]);
        let y = Vector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(
            m.matvec_transposed(&y).unwrap(),
            m.transpose().matvec(&y).unwrap()
        );
    }

    #[test]
    fn rank_detects_dependent_columns() {
        let m = Matrix::new(3, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        assert_eq!(m.column_rank(1e-10), 1);
        assert_eq!(Matrix::<f64>::identity(4).column_rank(1e-10), 4);
    }

    #[test]
    fn matmul_identity() {
        let m = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.matmul(&Matrix::identity(2)).unwrap(), m);
    }
}
