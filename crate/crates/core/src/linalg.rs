//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).max()
}


pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Orthonormal basis of the range of a symmetric matrix, as columns.
pub fn range_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let s = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let scale = s.eigenvalues.amax();
    let cols: Vec<DVector<f64>> = (0..m.nrows())
        .filter(|&k| s.eigenvalues[k].abs() > rel_tol * scale)
        .map(|k| s.eigenvectors.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Moore-Penrose pseudo-inverse of a symmetric-ish square matrix.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = rel_tol * smax.max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(cut).expect("both factors were requested")
}
