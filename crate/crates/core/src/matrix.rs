//! Small dense row-major square matrices.

use alloc::vec;
use alloc::vec::Vec;

/// Dense `n × n` matrix of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    /// All-zero matrix.
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// Builds from nested rows. Returns `None` when the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n {
                return None;
            }
            m.data[j * n..(j + 1) * n].copy_from_slice(row);
        }
        Some(m)
    }

    /// Dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, j: usize, m: usize) -> f64 {
        self.data[j * self.n + m]
    }

    #[inline]
    pub fn set(&mut self, j: usize, m: usize, v: f64) {
        self.data[j * self.n + m] = v;
    }

    /// Row `j` as a slice.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn row_sum(&self, j: usize) -> f64 {
        self.row(j).iter().sum()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|j| (0..j).all(|m| self.get(j, m) == self.get(m, j)))
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (j, yj) in y.iter_mut().enumerate().take(self.n) {
            *yj = self.row(j).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Every entry multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| v * k).collect() }
    }

    /// Row-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Nested rows, mostly for serialization.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|j| self.row(j).to_vec()).collect()
    }
}
