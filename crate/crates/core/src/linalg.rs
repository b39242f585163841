//! Packed lower-triangular Cholesky factor grown one row at a time.
//!
//! A from-scratch factorization is the same sequence of row appends as an
//! incremental one, so `fit(A ∪ B)` and `extend(fit(A), B)` produce
//! bit-identical factors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CholeskyFactor {
    n: usize,
    // row i occupies data[i(i+1)/2 .. i(i+1)/2 + i + 1]
    data: Vec<f64>,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

impl CholeskyFactor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Factor a dense symmetric matrix (only the lower triangle is read).
    pub fn from_dense(a: &[Vec<f64>]) -> Result<Self> {
        let mut f = Self::new();
        for (i, row) in a.iter().enumerate() {
            f.push_row(&row[..i], row[i])?;
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let s = row_start(i);
        &self.data[s..s + i + 1]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[row_start(i) + j]
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.data[row_start(i) + i]
    }

    /// Append the row for a new variable whose covariances with the existing
    /// variables are `cross` and whose variance is `diag`. Cost O(n²).
    pub fn push_row(&mut self, cross: &[f64], diag: f64) -> Result<()> {
        debug_assert_eq!(cross.len(), self.n);
        let n = self.n;
        let r = self.solve_lower(cross);
        let d2 = diag - r.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > 0.0 && d2.is_finite()) || r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization { pivot: n });
        }
        self.data.extend_from_slice(&r);
        self.data.push(d2.sqrt());
        self.n += 1;
        Ok(())
    }

    /// Solve `L z = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let s: f64 = row[..i].iter().zip(&z).map(|(l, zj)| l * zj).sum();
            z.push((b[i] - s) / row[i]);
        }
        z
    }

    /// Solve `Lᵀ x = z`.
    pub fn solve_upper(&self, z: &[f64]) -> Vec<f64> {
        let mut x = z.to_vec();
        for j in (0..self.n).rev() {
            let row = self.row(j);
            x[j] /= row[j];
            let xj = x[j];
            for (xi, l) in x[..j].iter_mut().zip(&row[..j]) {
                *xi -= l * xj;
            }
        }
        x
    }

    /// Solve `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log det(L Lᵀ) = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// `L Lᵀ` as a dense matrix.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for j in 0..=i {
                let v: f64 = self.row(i)[..=j]
                    .iter()
                    .zip(self.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        out
    }
}
