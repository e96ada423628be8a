//! Thin helpers over `nalgebra-sparse`.

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CscMatrix, CsrMatrix};

use crate::error::{Error, Result};

pub type SparseMatrix = CsrMatrix<f64>;

pub fn mat_vec(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    a.row_iter()
        .map(|row| {
            row.col_indices()
                .iter()
                .zip(row.values())
                .map(|(&j, &v)| v * x[j])
                .sum()
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `xᵀ A x`.
pub fn quadratic_form(a: &SparseMatrix, x: &[f64]) -> f64 {
    dot(&mat_vec(a, x), x)
}

pub fn to_dense(a: &SparseMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        d[(i, j)] += *v;
    }
    d
}

/// Largest entry of `|A − Aᵀ|` relative to the largest `|A|` entry.
pub fn asymmetry(a: &SparseMatrix) -> f64 {
    let d = to_dense(a);
    let scale = d.amax().max(f64::MIN_POSITIVE);
    (&d - d.transpose()).amax() / scale
}

/// Sparse Cholesky factor of a symmetric positive definite matrix.
pub struct SpdFactor {
    chol: CscCholesky<f64>,
}

impl SpdFactor {
    pub fn new(a: &SparseMatrix) -> Result<SpdFactor> {
        let csc = CscMatrix::from(a);
        let chol = CscCholesky::factor(&csc)
            .map_err(|e| Error::numeric(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(SpdFactor { chol })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = DMatrix::from_column_slice(b.len(), 1, b);
        self.chol.solve(&rhs).as_slice().to_vec()
    }

    pub fn solve_many(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `sqrt(bᵀ A⁻¹ b)`: the dual norm of `b` with respect to the `A` inner product.
    pub fn dual_norm(&self, b: &[f64]) -> f64 {
        dot(&self.solve(b), b).max(0.0).sqrt()
    }
}
