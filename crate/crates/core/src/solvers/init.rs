//! Pre-disturbance operating point: a Newton power flow followed by a
//! back-solve of every device so that the result is an exact equilibrium.

use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

use super::newton::{newton_solve_fd, NewtonConfig, NewtonStatus};
use crate::dae::{ltc_rule, residual_norms, HybridModel, PartitionedState, PowerModel, Setpoints};
use crate::netmodel::{build_admittance, BusKind, Overlay, SystemSpec};

/// Residual bound the returned equilibrium must satisfy.
pub const INIT_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitError {
    #[error("power flow did not converge ({0:?})")]
    PowerFlowDiverged(NewtonStatus),
    #[error("infeasible device initialization: {0}")]
    InfeasibleDeviceInit(String),
}

/// Solved bus voltages.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlow {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Net complex injection required at every bus (generation minus load).
    pub injection: Vec<Complex64>,
}

/// Polar Newton power flow from a flat start. Static loads are constant
/// power; exponential-recovery loads draw their steady-state characteristic.
pub fn power_flow(sys: &SystemSpec) -> Result<PowerFlow, InitError> {
    let n = sys.n_bus();
    let ybus = build_admittance(sys, &sys.initial_taps(), &Overlay::new(sys));
    let buses = sys.buses();

    let mut v0 = vec![1.0; n];
    for (i, b) in buses.iter().enumerate() {
        if let Some(vs) = b.v_set {
            v0[i] = vs;
        }
    }
    let theta_idx: Vec<usize> = (0..n).filter(|&i| buses[i].kind != BusKind::Slack).collect();
    let v_idx: Vec<usize> = (0..n).filter(|&i| buses[i].kind == BusKind::PQ).collect();
    let mut p_gen = vec![0.0; n];
    for (g, gp) in sys.generators().iter().enumerate() {
        p_gen[sys.gen_bus(g)] += gp.p_set;
    }

    let unpack = |w: &DVector<f64>| {
        let mut v = v0.clone();
        let mut th = vec![0.0; n];
        for (k, &i) in theta_idx.iter().enumerate() {
            th[i] = w[k];
        }
        for (k, &i) in v_idx.iter().enumerate() {
            v[i] = w[theta_idx.len() + k];
        }
        (v, th)
    };
    let demand = |v: &[f64]| -> Vec<Complex64> {
        let mut d: Vec<Complex64> = (0..n)
            .map(|i| {
                let (p, q) = sys.static_load(i);
                Complex64::new(p, q)
            })
            .collect();
        for (l, lp) in sys.erl_loads().iter().enumerate() {
            let b = sys.erl_bus(l);
            let r = v[b] / lp.v0;
            d[b] += Complex64::new(lp.p0 * r.powf(lp.alpha_s), lp.q0 * r.powf(lp.beta_s));
        }
        d
    };
    let flow = |v: &[f64], th: &[f64]| -> Vec<Complex64> {
        let vc: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(v[i], th[i])).collect();
        (0..n)
            .map(|i| {
                let cur: Complex64 = (0..n).map(|j| ybus.y[(i, j)] * vc[j]).sum();
                vc[i] * cur.conj()
            })
            .collect()
    };
    let residual = |w: &DVector<f64>| {
        let (v, th) = unpack(w);
        let s = flow(&v, &th);
        let d = demand(&v);
        let mut r = DVector::zeros(theta_idx.len() + v_idx.len());
        for (k, &i) in theta_idx.iter().enumerate() {
            r[k] = p_gen[i] - d[i].re - s[i].re;
        }
        for (k, &i) in v_idx.iter().enumerate() {
            r[theta_idx.len() + k] = -d[i].im - s[i].im;
        }
        r
    };

    let mut w0 = DVector::zeros(theta_idx.len() + v_idx.len());
    for (k, &i) in v_idx.iter().enumerate() {
        w0[theta_idx.len() + k] = v0[i];
    }
    let cfg = NewtonConfig {
        tol_inf: 1e-12,
        ..Default::default()
    };
    let res = newton_solve_fd(residual, w0, &cfg);
    if !res.converged() {
        return Err(InitError::PowerFlowDiverged(res.status));
    }
    let (v, theta) = unpack(&res.solution);
    if v.iter().any(|&x| !(x > 0.0)) {
        return Err(InitError::PowerFlowDiverged(res.status));
    }
    let injection = flow(&v, &theta);
    Ok(PowerFlow { v, theta, injection })
}

/// Builds the dynamic model and its starting equilibrium.
///
/// Back-solve order: generator current from the network, then `E'_q` and
/// `δ` from the stator relation, `E_fd` from `Ė'_q = 0`, the AVR reference
/// from `Ė_fd = 0`, `P_m` from `ω̇ = 0` (also the governor reference), and
/// the load recovery states from `ẋ_p = ẋ_q = 0`.
pub fn initialize_equilibrium(sys: &SystemSpec) -> Result<(PowerModel, PartitionedState), InitError> {
    let pf = power_flow(sys)?;
    let n = sys.n_bus();
    let ng = sys.generators().len();
    let infeasible = |m: String| InitError::InfeasibleDeviceInit(m);

    let mut load_shunt = vec![Complex64::new(0.0, 0.0); n];
    for (i, ys) in load_shunt.iter_mut().enumerate() {
        let (p, q) = sys.static_load(i);
        let v2 = pf.v[i] * pf.v[i];
        *ys = Complex64::new(p / v2, -q / v2);
    }

    let mut x = DVector::zeros(4 * ng);
    let mut v_ref = vec![0.0; ng];
    let mut pm0 = vec![0.0; ng];
    for (g, gp) in sys.generators().iter().enumerate() {
        let b = sys.gen_bus(g);
        // Generator output = network draw + local demand.
        let (sp, sq) = sys.static_load(b);
        let mut s_gen = pf.injection[b] + Complex64::new(sp, sq);
        for (l, lp) in sys.erl_loads().iter().enumerate() {
            if sys.erl_bus(l) == b {
                let r = pf.v[b] / lp.v0;
                s_gen += Complex64::new(lp.p0 * r.powf(lp.alpha_s), lp.q0 * r.powf(lp.beta_s));
            }
        }
        let vc = Complex64::from_polar(pf.v[b], pf.theta[b]);
        let cur = (s_gen / vc).conj();
        let e = vc + Complex64::new(0.0, gp.xd_prime) * cur;
        let (eq, delta) = (e.norm(), e.arg());
        let id = (eq - pf.v[b] * (delta - pf.theta[b]).cos()) / gp.xd_prime;
        let efd = eq + (gp.xd - gp.xd_prime) * id;
        let avr = sys.avr(g);
        if let Some(o) = sys.oxl(g) {
            if efd > o.efd_limit {
                return Err(infeasible(format!(
                    "generator '{}' needs E_fd={efd:.4} above its OXL limit {}",
                    gp.id, o.efd_limit
                )));
            }
        }
        if !(efd > avr.efd_min && efd < avr.efd_max) {
            return Err(infeasible(format!(
                "generator '{}' needs E_fd={efd:.4} outside ({}, {})",
                gp.id, avr.efd_min, avr.efd_max
            )));
        }
        x[4 * g] = delta;
        x[4 * g + 1] = 1.0;
        x[4 * g + 2] = eq;
        x[4 * g + 3] = efd;
        v_ref[g] = pf.v[b] + efd / avr.ka;
        pm0[g] = s_gen.re;
    }

    let set = Setpoints {
        v_ref,
        pm0: pm0.clone(),
        load_shunt,
    };
    let model = PowerModel::new(sys.clone(), set);
    let dims = model.dims();
    let mut zc = DVector::zeros(dims.zc);
    for g in 0..ng {
        if let Some(k) = model.gov_slot(g) {
            zc[k] = pm0[g];
        }
    }
    for (l, lp) in sys.erl_loads().iter().enumerate() {
        let k = model.erl_slot(l);
        let r = pf.v[sys.erl_bus(l)] / lp.v0;
        zc[k] = lp.p0 * r.powf(lp.alpha_s) - lp.p0 * r.powf(lp.alpha_t);
        zc[k + 1] = lp.q0 * r.powf(lp.beta_s) - lp.q0 * r.powf(lp.beta_t);
    }
    let mut y = DVector::zeros(2 * n);
    for i in 0..n {
        y[i] = pf.v[i];
        y[n + i] = pf.theta[i];
    }
    let state = PartitionedState {
        t: 0.0,
        zc,
        zd: model.initial_discrete(),
        x,
        y,
    };

    for (k, p) in sys.ltcs().iter().enumerate() {
        let v = pf.v[sys.ltc_controlled_bus(k)];
        if ltc_rule(p, p.m0, v) != p.m0 {
            return Err(infeasible(format!(
                "ltc '{}' would act at the initial point (v={v:.5}, band {}±{})",
                p.id, p.v_ref, p.deadband
            )));
        }
    }
    let net = model.network(&model.base_topology(), &state.zd);
    let (f, g, h) = residual_norms(&model, &net, &state);
    if f.max(g).max(h) > INIT_RESIDUAL_TOL {
        return Err(infeasible(format!(
            "equilibrium residuals too large (|f|={f:e}, |g|={g:e}, |h_c|={h:e})"
        )));
    }
    Ok((model, state))
}
