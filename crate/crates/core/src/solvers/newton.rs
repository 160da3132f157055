use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::linear::{norm_inf, solve_linear};

/// Residual growth relative to the starting norm that counts as divergence.
pub const DIVERGENCE_GROWTH: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damping {
    None,
    /// Halve the step until the residual norm decreases, at most this many
    /// times.
    Halving(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub tol_inf: f64,
    pub max_iter: usize,
    pub damping: Damping,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol_inf: 1e-10,
            max_iter: 50,
            damping: Damping::Halving(8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum NewtonStatus {
    Converged { iterations: usize },
    MaxIterExceeded,
    SingularJacobian,
    Diverged { growth: f64 },
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub status: NewtonStatus,
    pub solution: DVector<f64>,
    pub final_residual_norm: f64,
    /// Largest Jacobian condition estimate seen during the iteration.
    pub max_condition: f64,
}

impl NewtonResult {
    pub fn converged(&self) -> bool {
        matches!(self.status, NewtonStatus::Converged { .. })
    }
}

/// Damped Newton iteration.
///
/// At least one Jacobian factorization is always performed, so a singular
/// Jacobian is reported even when `x0` already satisfies the tolerance.
pub fn newton_solve<R, J>(mut residual: R, mut jacobian: J, x0: DVector<f64>, cfg: &NewtonConfig) -> NewtonResult
where
    R: FnMut(&DVector<f64>) -> DVector<f64>,
    J: FnMut(&DVector<f64>) -> DMatrix<f64>,
{
    let mut x = x0;
    let mut r = residual(&x);
    let mut norm = norm_inf(&r);
    let start = norm.max(cfg.tol_inf);
    let mut max_condition: f64 = 0.0;
    let result = |status, x, norm, cond| NewtonResult {
        status,
        solution: x,
        final_residual_norm: norm,
        max_condition: cond,
    };
    if !norm.is_finite() {
        return result(NewtonStatus::Diverged { growth: f64::INFINITY }, x, norm, max_condition);
    }
    for it in 1..=cfg.max_iter {
        let jac = jacobian(&x);
        let (dx, cond) = match solve_linear(&jac, &(-&r)) {
            Ok(v) => v,
            Err(_) => return result(NewtonStatus::SingularJacobian, x, norm, f64::INFINITY),
        };
        max_condition = max_condition.max(cond);

        let mut lambda = 1.0;
        let mut trial = &x + &dx;
        let mut r_trial = residual(&trial);
        let mut n_trial = norm_inf(&r_trial);
        if let Damping::Halving(max_halvings) = cfg.damping {
            let mut k = 0;
            while !(n_trial.is_finite() && n_trial < norm) && k < max_halvings {
                lambda *= 0.5;
                trial = &x + &dx * lambda;
                r_trial = residual(&trial);
                n_trial = norm_inf(&r_trial);
                k += 1;
            }
        }
        x = trial;
        r = r_trial;
        norm = n_trial;
        if norm <= cfg.tol_inf {
            return result(NewtonStatus::Converged { iterations: it }, x, norm, max_condition);
        }
        if !norm.is_finite() || norm > DIVERGENCE_GROWTH * start {
            return result(NewtonStatus::Diverged { growth: norm / start }, x, norm, max_condition);
        }
    }
    result(NewtonStatus::MaxIterExceeded, x, norm, max_condition)
}

/// Forward-difference step used for every finite-difference Jacobian.
#[inline]
pub fn fd_step(v: f64) -> f64 {
    f64::max(1e-7, 1e-7 * v.abs())
}

/// Forward-difference Jacobian of `residual` at `x`, given `r0 = residual(x)`.
pub fn fd_jacobian<R>(residual: &mut R, x: &DVector<f64>, r0: &DVector<f64>) -> DMatrix<f64>
where
    R: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(r0.len(), n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let rp = residual(&xp);
        for i in 0..r0.len() {
            jac[(i, j)] = (rp[i] - r0[i]) / h;
        }
        xp[j] = x[j];
    }
    jac
}

/// Newton with a forward-difference Jacobian of the same residual.
pub fn newton_solve_fd<R>(residual: R, x0: DVector<f64>, cfg: &NewtonConfig) -> NewtonResult
where
    R: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let cell = std::cell::RefCell::new(residual);
    newton_solve(
        |x| (cell.borrow_mut())(x),
        |x| {
            let mut f = cell.borrow_mut();
            let r0 = f(x);
            fd_jacobian(&mut *f, x, &r0)
        },
        x0,
        cfg,
    )
}
