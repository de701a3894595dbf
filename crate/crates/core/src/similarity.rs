//! Batch similarity matrix `S = X·Yᵀ` and its reverse pass.
//!
//! Pair `i` occupies row `i` of both batches, so positives sit on the
//! diagonal of `S`. Every off-diagonal entry is a negative, including
//! accidental duplicates of the positive content.

use crate::error::{Error, Result};
use crate::numeric::{dot, Matrix};

/// Square `B×B` matrix of pairwise scores with positives on the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix(Matrix);

impl SimilarityMatrix {
    pub fn new(s: Matrix) -> Result<Self> {
        if s.rows() != s.cols() {
            return Err(Error::shape(format!("similarity matrix must be square, got {}x{}", s.rows(), s.cols())));
        }
        Ok(Self(s))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Batch size `B`.
    pub fn batch(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        SimilarityMatrix(self.0.transpose())
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.batch()).map(|i| self.get(i, i)).collect()
    }
}

fn check_pair(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::shape(format!(
            "paired batches differ: x is {}x{}, y is {}x{}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    Ok(())
}

/// `s[i][j] = x_i · y_j`, no normalization.
pub fn similarity_forward(x: &Matrix, y: &Matrix) -> Result<SimilarityMatrix> {
    check_pair(x, y)?;
    Ok(SimilarityMatrix(x.matmul_nt(y)?))
}

/// Gradients of a scalar through `S = X·Yᵀ`: `(grad_s·Y, grad_sᵀ·X)`.
pub fn similarity_backward(grad_s: &Matrix, x: &Matrix, y: &Matrix) -> Result<(Matrix, Matrix)> {
    check_pair(x, y)?;
    let b = x.rows();
    if grad_s.shape() != (b, b) {
        return Err(Error::shape(format!("grad_s is {}x{}, batch is {b}", grad_s.rows(), grad_s.cols())));
    }
    let grad_x = grad_s.matmul(y)?;
    let grad_y = grad_s.matmul_tn(x)?;
    Ok((grad_x, grad_y))
}

/// Rows scaled to unit L2 norm, plus the original norms for the reverse pass.
/// A zero row stays zero.
pub fn l2_normalize_rows(x: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
        norms.push(n);
    }
    (out, norms)
}

/// Reverse pass of [`l2_normalize_rows`]: `(g − u·(u·g)) / ‖x‖` per row.
pub fn l2_normalize_backward(grad: &Matrix, unit: &Matrix, norms: &[f64]) -> Result<Matrix> {
    if grad.shape() != unit.shape() || norms.len() != unit.rows() {
        return Err(Error::shape(format!(
            "normalize backward: grad {}x{}, unit {}x{}, {} norms",
            grad.rows(),
            grad.cols(),
            unit.rows(),
            unit.cols(),
            norms.len()
        )));
    }
    let mut out = Matrix::zeros(grad.rows(), grad.cols());
    for (i, &norm) in norms.iter().enumerate() {
        if norm == 0.0 {
            continue;
        }
        let u = unit.row(i);
        let g = grad.row(i);
        let proj = dot(u, g);
        for ((o, &gk), &uk) in out.row_mut(i).iter_mut().zip(g).zip(u) {
            *o = (gk - uk * proj) / norm;
        }
    }
    Ok(out)
}
