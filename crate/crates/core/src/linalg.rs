//! Dense symmetric eigendecomposition and matrix functions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure, Error, Result};

/// Eigenpairs of a real symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: DVector<f64>,
    /// Orthogonal matrix whose columns are the eigenvectors.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        ensure!(
            a.is_square(),
            Error::domain(format!("matrix is {}x{}, not square", a.nrows(), a.ncols()))
        );
        ensure!(
            is_symmetric(a, 1e-10),
            Error::domain("matrix is not symmetric within 1e-10")
        );
        let n = a.nrows();
        if n == 0 {
            return Ok(Self {
                eigenvalues: DVector::zeros(0),
                eigenvectors: DMatrix::zeros(0, 0),
            });
        }
        let sym = (a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(f(mu_i)) V^T rhs`.
    pub fn apply<F>(&self, rhs: &DMatrix<f64>, mut f: F) -> DMatrix<f64>
    where
        F: FnMut(f64) -> f64,
    {
        let v = &self.eigenvectors;
        let mut coeffs = v.tr_mul(rhs);
        for (i, mut row) in coeffs.row_iter_mut().enumerate() {
            row *= f(self.eigenvalues[i]);
        }
        v * coeffs
    }

    /// `V diag(f(mu_i)) V^T`.
    pub fn matrix_function<F>(&self, mut f: F) -> DMatrix<f64>
    where
        F: FnMut(f64) -> f64,
    {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.eigenvectors[(i, j)] * f(self.eigenvalues[j])
        });
        scaled * self.eigenvectors.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.matrix_function(|mu| mu)
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(1.0);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if a.is_square() && is_symmetric(a, 1e-12) {
        return EigenSystem::new(a)
            .map(|e| e.max_abs_eigenvalue())
            .unwrap_or(f64::NAN);
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |m, &s| m.max(s))
}

/// Frobenius (Hilbert–Schmidt) norm.
pub fn hs_norm(a: &DMatrix<f64>) -> f64 {
    a.norm()
}
