use nalgebra::linalg::Schur;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use super::DaeError;

const SCHUR_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<Complex64>,
    pub max_real_part: f64,
    /// Filled in when the matrix is a reduced fast Jacobian.
    pub g_y_condition_estimate: Option<f64>,
}

/// All eigenvalues of a dense real matrix via the real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<SpectrumResult, DaeError> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "eigenvalues of a non-square matrix");
    let eigs: Vec<Complex64> = if n == 0 {
        Vec::new()
    } else {
        let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or(DaeError::EigenNonConvergence(n))?;
        schur.complex_eigenvalues().iter().copied().collect()
    };
    let max_real_part = eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectrumResult {
        eigenvalues: eigs,
        max_real_part,
        g_y_condition_estimate: None,
    })
}
