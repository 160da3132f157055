use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative pivot threshold below which a matrix is declared singular.
pub const PIVOT_REL_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("matrix is singular (pivot {pivot:e} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },
    #[error("dimension mismatch: matrix is {rows}x{cols}, rhs has {rhs} entries")]
    Dimension { rows: usize, cols: usize, rhs: usize },
}

pub fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter()
        .fold(0.0, |m, x| if x.abs() > m || x.is_nan() { x.abs() } else { m })
}

pub fn matrix_norm_inf(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU factorization with partial pivoting, stored in place.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: DMatrix<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &DMatrix<f64>) -> Result<Self, LinearError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinearError::Dimension {
                rows: n,
                cols: a.ncols(),
                rhs: n,
            });
        }
        let threshold = PIVOT_REL_TOL * matrix_norm_inf(a);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if !(pivot > threshold) || pivot == 0.0 {
                return Err(LinearError::SingularMatrix { column: k, pivot });
            }
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let l = lu[(i, k)] / d;
                lu[(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= l * u;
                    }
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.lu.nrows();
        let mut x = DVector::from_iterator(n, self.perm.iter().map(|&p| b[p]));
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// `‖A⁻¹‖∞`, assembled from solves against every unit vector.
    pub fn inverse_norm_inf(&self) -> f64 {
        let n = self.lu.nrows();
        let mut row_sums = vec![0.0; n];
        let mut e = DVector::zeros(n);
        for k in 0..n {
            e[k] = 1.0;
            let col = self.solve(&e);
            for (s, c) in row_sums.iter_mut().zip(col.iter()) {
                *s += c.abs();
            }
            e[k] = 0.0;
        }
        row_sums.into_iter().fold(0.0, f64::max)
    }
}

/// Solves `A x = b`, returning `x` and the infinity-norm condition number.
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64), LinearError> {
    if a.nrows() != b.len() {
        return Err(LinearError::Dimension {
            rows: a.nrows(),
            cols: a.ncols(),
            rhs: b.len(),
        });
    }
    let lu = Lu::factor(a)?;
    let x = lu.solve(b);
    let cond = matrix_norm_inf(a) * lu.inverse_norm_inf();
    Ok((x, cond))
}
