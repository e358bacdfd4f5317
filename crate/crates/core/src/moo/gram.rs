//! Per-group gradient matrices and the Pareto residual.

use alloc::vec;
use alloc::vec::Vec;

/// `N x P` matrix of per-group flat gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GradMatrix {
    pub fn new(cols: usize) -> Self {
        GradMatrix { rows: 0, cols, data: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut m = GradMatrix::new(cols);
        for r in rows {
            m.push(r.as_ref());
        }
        m
    }

    /// Appends a gradient row. Panics on a width mismatch.
    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols, "gradient width");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn num_groups(&self) -> usize {
        self.rows
    }

    pub fn num_params(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// First row that contains a non-finite entry.
    pub fn first_non_finite_row(&self) -> Option<usize> {
        (0..self.rows).find(|&i| self.row(i).iter().any(|v| !v.is_finite()))
    }

    /// Row-major `N x N` Gram matrix `G G^T`.
    pub fn gram(&self) -> Vec<f64> {
        let n = self.rows;
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }

    /// `sum_n weights[n] * row(n)`.
    pub fn combine(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.rows, "one weight per group");
        let mut out = vec![0.0; self.cols];
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, g) in out.iter_mut().zip(self.row(i)) {
                *o += w * g;
            }
        }
        out
    }
}

/// `w^T K w` for a row-major square `K`.
pub fn quad_form(k: &[f64], w: &[f64]) -> f64 {
    let n = w.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += k[i * n + j] * w[j];
        }
        s += w[i] * row;
    }
    s
}

/// Pareto residual `||sum_n w_n g_n||^2` computed through the Gram matrix.
pub fn pareto_residual(gram: &[f64], weights: &[f64]) -> f64 {
    quad_form(gram, weights).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_and_combine() {
        let g = GradMatrix::from_rows(&[[1.0, 0.0, 2.0], [0.0, 3.0, 1.0]]);
        assert_eq!(g.gram(), vec![5.0, 2.0, 2.0, 10.0]);
        assert_eq!(g.combine(&[0.5, 0.5]), vec![0.5, 1.5, 1.5]);
        let direct: f64 = g.combine(&[0.5, 0.5]).iter().map(|v| v * v).sum();
        assert!((pareto_residual(&g.gram(), &[0.5, 0.5]) - direct).abs() < 1e-15);
    }

    #[test]
    fn opposite_gradients_cancel() {
        let g = GradMatrix::from_rows(&[[1.0, -2.0], [-1.0, 2.0]]);
        assert_eq!(g.combine(&[0.5, 0.5]), vec![0.0, 0.0]);
        assert_eq!(pareto_residual(&g.gram(), &[0.5, 0.5]), 0.0);
    }

    #[test]
    fn non_finite_row() {
        let g = GradMatrix::from_rows(&[[1.0, 0.0], [f64::NAN, 0.0]]);
        assert_eq!(g.first_non_finite_row(), Some(1));
    }
}
