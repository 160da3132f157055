use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::spectrum::{eigenvalues, SpectrumResult};
use super::{residual_norms, DaeError, HybridModel, PartitionedState};
use crate::solvers::newton::fd_step;
use crate::solvers::{matrix_norm_inf, Lu};

/// Real parts must be below `-STABILITY_MARGIN` to count as stable.
pub const STABILITY_MARGIN: f64 = 1e-8;
/// Condition estimate above which `∂g/∂y` is treated as singular.
pub const COND_LIMIT: f64 = 1e12;

/// Partial-derivative blocks at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    pub f_x: DMatrix<f64>,
    pub f_y: DMatrix<f64>,
    pub g_x: DMatrix<f64>,
    pub g_y: DMatrix<f64>,
    pub h_x: DMatrix<f64>,
    pub h_y: DMatrix<f64>,
    pub h_zc: DMatrix<f64>,
    pub evaluated_at: PartitionedState,
}

/// Forward-difference blocks with step `max(1e-7, 1e-7·|v|)` per variable.
pub fn jacobian_blocks<M: HybridModel>(model: &M, net: &M::Network, s: &PartitionedState) -> JacobianBlocks {
    let d = model.dims();
    let f0 = model.eval_f(net, s);
    let g0 = model.eval_g(net, s);
    let h0 = model.eval_hc(net, s);
    let col = |r: &DVector<f64>, r0: &DVector<f64>, h: f64| (r - r0) / h;

    let mut b = JacobianBlocks {
        f_x: DMatrix::zeros(d.x, d.x),
        f_y: DMatrix::zeros(d.x, d.y),
        g_x: DMatrix::zeros(d.y, d.x),
        g_y: DMatrix::zeros(d.y, d.y),
        h_x: DMatrix::zeros(d.zc, d.x),
        h_y: DMatrix::zeros(d.zc, d.y),
        h_zc: DMatrix::zeros(d.zc, d.zc),
        evaluated_at: s.clone(),
    };
    let mut p = s.clone();
    for j in 0..d.x {
        let h = fd_step(s.x[j]);
        p.x[j] = s.x[j] + h;
        b.f_x.set_column(j, &col(&model.eval_f(net, &p), &f0, h));
        b.g_x.set_column(j, &col(&model.eval_g(net, &p), &g0, h));
        b.h_x.set_column(j, &col(&model.eval_hc(net, &p), &h0, h));
        p.x[j] = s.x[j];
    }
    for j in 0..d.y {
        let h = fd_step(s.y[j]);
        p.y[j] = s.y[j] + h;
        b.f_y.set_column(j, &col(&model.eval_f(net, &p), &f0, h));
        b.g_y.set_column(j, &col(&model.eval_g(net, &p), &g0, h));
        b.h_y.set_column(j, &col(&model.eval_hc(net, &p), &h0, h));
        p.y[j] = s.y[j];
    }
    for j in 0..d.zc {
        let h = fd_step(s.zc[j]);
        p.zc[j] = s.zc[j] + h;
        b.h_zc.set_column(j, &col(&model.eval_hc(net, &p), &h0, h));
        p.zc[j] = s.zc[j];
    }
    b
}

/// `f_x − f_y · g_y⁻¹ · g_x`, together with the condition estimate of `g_y`.
pub fn reduced_fast_jacobian(b: &JacobianBlocks) -> Result<(DMatrix<f64>, f64), DaeError> {
    if b.g_y.nrows() == 0 {
        return Ok((b.f_x.clone(), 1.0));
    }
    let lu = Lu::factor(&b.g_y).map_err(|_| DaeError::SingularAlgebraic {
        condition: f64::INFINITY,
    })?;
    let condition = matrix_norm_inf(&b.g_y) * lu.inverse_norm_inf();
    if !(condition <= COND_LIMIT) {
        return Err(DaeError::SingularAlgebraic { condition });
    }
    let mut sol = DMatrix::zeros(b.g_x.nrows(), b.g_x.ncols());
    for j in 0..b.g_x.ncols() {
        sol.set_column(j, &lu.solve(&b.g_x.column(j).into_owned()));
    }
    Ok((&b.f_x - &b.f_y * sol, condition))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum GammaS {
    InGammaS,
    UnstableFast { max_real_part: f64 },
    SingularAlgebraic,
}

impl GammaS {
    pub fn from_reduced(reduced: Result<SpectrumResult, DaeError>) -> Result<GammaS, DaeError> {
        match reduced {
            Ok(sp) if sp.max_real_part < -STABILITY_MARGIN => Ok(GammaS::InGammaS),
            Ok(sp) => Ok(GammaS::UnstableFast {
                max_real_part: sp.max_real_part,
            }),
            Err(DaeError::SingularAlgebraic { .. }) => Ok(GammaS::SingularAlgebraic),
            Err(e) => Err(e),
        }
    }
}

/// Spectrum of the reduced fast Jacobian at a state.
pub fn fast_spectrum(b: &JacobianBlocks) -> Result<SpectrumResult, DaeError> {
    let (m, cond) = reduced_fast_jacobian(b)?;
    let mut sp = eigenvalues(&m)?;
    sp.g_y_condition_estimate = Some(cond);
    Ok(sp)
}

/// Classifies a point of the constraint manifold: inside the stable subset,
/// fast-unstable, or algebraically singular.
pub fn gamma_s_membership<M: HybridModel>(
    model: &M,
    net: &M::Network,
    s: &PartitionedState,
    manifold_tol: f64,
) -> Result<GammaS, DaeError> {
    let (f_norm, g_norm, _) = residual_norms(model, net, s);
    if !(f_norm <= manifold_tol && g_norm <= manifold_tol) {
        return Err(DaeError::NotOnManifold { f_norm, g_norm });
    }
    GammaS::from_reduced(fast_spectrum(&jacobian_blocks(model, net, s)))
}
