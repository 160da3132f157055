//! Comparison of complete and QSS runs, outcome classification, and the
//! per-discrete-event audit that explains a QSS failure.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::dae::{gamma_s_membership, residual_norms, DiscreteState, GammaS, HybridModel, PartitionedState};
use crate::netmodel::ScenarioSpec;
use crate::sim::{
    project_to_manifold, run_complete, run_qss_with_handoff, stability_region_membership, EventMarker, Membership,
    SimConfig, Termination, Trajectory,
};
use crate::solvers::{NewtonConfig, NewtonStatus};

/// Default per-variable tolerance for matching two equilibria.
pub const SEP_MATCH_TOL: f64 = 1e-5;
/// Residual bound on a returned long-term equilibrium.
pub const SEP_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnoseError {
    #[error("trajectories do not overlap in time")]
    EmptyOverlap,
    #[error("equilibrium solve failed ({0:?})")]
    Newton(NewtonStatus),
    #[error("a discrete device would still act at the computed equilibrium")]
    NotFixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    AgreeStableSameSEP,
    AgreeUnstable,
    CounterExampleQssStableCompleteUnstable,
    DifferentSEPs,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRecord {
    pub event_time: f64,
    pub z_d_before: DiscreteState,
    pub z_d_after: DiscreteState,
    pub membership: Membership,
    /// Spectrum test at the manifold point nearest the snapshot; `None` when
    /// no such point could be computed.
    pub gamma_s: Option<GammaS>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisReport {
    pub verdict: Verdict,
    /// Per continuous variable, `[z_c; x; y]` order.
    pub max_deviation: Vec<f64>,
    pub audits: Vec<AuditRecord>,
    pub sep_complete: Option<PartitionedState>,
    pub sep_qss: Option<PartitionedState>,
}

fn interpolate(samples: &[PartitionedState], t: f64) -> DVector<f64> {
    let k = samples.partition_point(|s| s.t < t);
    if k == 0 {
        return samples[0].continuous();
    }
    if k == samples.len() {
        return samples[k - 1].continuous();
    }
    let (a, b) = (&samples[k - 1], &samples[k]);
    if b.t == t {
        return b.continuous();
    }
    let w = (t - a.t) / (b.t - a.t);
    a.continuous() * (1.0 - w) + b.continuous() * w
}

/// Largest per-variable difference over the common time interval, sampled
/// on the union of both time grids with linear interpolation.
pub fn compare_runs(traj_c: &Trajectory, traj_q: &Trajectory) -> Result<Vec<f64>, DiagnoseError> {
    let lo = traj_c.t_start().max(traj_q.t_start());
    let hi = traj_c.t_final().min(traj_q.t_final());
    if traj_c.samples.is_empty() || traj_q.samples.is_empty() || lo > hi {
        return Err(DiagnoseError::EmptyOverlap);
    }
    let mut grid: Vec<f64> = traj_c
        .samples
        .iter()
        .chain(&traj_q.samples)
        .map(|s| s.t)
        .filter(|&t| t >= lo && t <= hi)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let n = traj_c.samples[0].dims().continuous();
    let mut dev = vec![0.0; n];
    for t in grid {
        let d = interpolate(&traj_c.samples, t) - interpolate(&traj_q.samples, t);
        for (m, v) in dev.iter_mut().zip(d.iter()) {
            *m = f64::max(*m, v.abs());
        }
    }
    Ok(dev)
}

pub fn classify_outcome(traj_c: &Trajectory, traj_q: &Trajectory, tol: f64) -> Verdict {
    match (&traj_c.termination, &traj_q.termination) {
        (Termination::ConvergedToSep(c), Termination::ConvergedToSep(q)) => {
            let same = c.zd.same_levels(&q.zd) && (c.continuous() - q.continuous()).amax() <= tol;
            if same {
                Verdict::AgreeStableSameSEP
            } else {
                Verdict::DifferentSEPs
            }
        }
        (c, Termination::ConvergedToSep(_)) if c.is_failure() => Verdict::CounterExampleQssStableCompleteUnstable,
        (c, q) if c.is_failure() && q.is_failure() => Verdict::AgreeUnstable,
        _ => Verdict::Inconclusive,
    }
}

/// Topology in force when a discrete change is recorded at `t`: discrete
/// updates at an instant precede scenario events at the same instant.
fn topology_before<M: HybridModel>(model: &M, scenario: &ScenarioSpec, t: f64) -> Option<M::Topology> {
    let mut topo = model.base_topology();
    for ev in scenario.events.iter().filter(|e| e.time < t - 1e-9) {
        topo = model.apply_event(&topo, &ev.kind).ok()?;
    }
    Some(topo)
}

/// One audit per discrete-level change of the complete run, in order.
pub fn per_event_audit<M: HybridModel>(
    model: &M,
    scenario: &ScenarioSpec,
    traj_c: &Trajectory,
    cfg: &SimConfig,
) -> Vec<AuditRecord> {
    traj_c
        .events
        .iter()
        .filter_map(|e| match &e.marker {
            EventMarker::DiscreteChange { before, after } => Some((e, before, after)),
            _ => None,
        })
        .map(|(e, before, after)| {
            let Some(topo) = topology_before(model, scenario, e.t) else {
                return AuditRecord {
                    event_time: e.t,
                    z_d_before: before.clone(),
                    z_d_after: after.clone(),
                    membership: Membership::Inconclusive {
                        reason: "scenario events could not be replayed".into(),
                    },
                    gamma_s: None,
                };
            };
            let (membership, _) = stability_region_membership(model, &topo, &e.snapshot, cfg);
            let net = model.network(&topo, &e.snapshot.zd);
            let gamma_s = project_to_manifold(model, &net, &e.snapshot, &cfg.newton)
                .ok()
                .and_then(|p| gamma_s_membership(model, &net, &p, cfg.manifold_tol).ok());
            AuditRecord {
                event_time: e.t,
                z_d_before: before.clone(),
                z_d_after: after.clone(),
                membership,
                gamma_s,
            }
        })
        .collect()
}

/// Long-term equilibrium near `guess`, with `z_d` held at the guess's
/// values: Newton on `(h_c, f, g) = 0`.
pub fn find_long_term_sep<M: HybridModel>(
    model: &M,
    topology: &M::Topology,
    guess: &PartitionedState,
    newton: &NewtonConfig,
) -> Result<PartitionedState, DiagnoseError> {
    let net = model.network(topology, &guess.zd);
    let sep = crate::sim::solve_long_term(model, &net, guess, newton).map_err(|e| DiagnoseError::Newton(e.status))?;
    let (f, g, h) = residual_norms(model, &net, &sep);
    if f.max(g).max(h) > SEP_RESIDUAL_TOL {
        return Err(DiagnoseError::Newton(NewtonStatus::MaxIterExceeded));
    }
    if !model.hd_fixed_point(&sep) {
        return Err(DiagnoseError::NotFixedPoint);
    }
    Ok(sep)
}

/// Runs both models (concurrently), compares, classifies and audits.
pub fn diagnose<M>(
    model: &M,
    scenario: &ScenarioSpec,
    cfg: &SimConfig,
    initial: &PartitionedState,
) -> (DiagnosisReport, Trajectory, Trajectory)
where
    M: HybridModel + Sync,
{
    let (traj_c, traj_q) = std::thread::scope(|sc| {
        let c = sc.spawn(|| run_complete(model, scenario, cfg, initial));
        let q = run_qss_with_handoff(model, scenario, cfg, initial);
        (c.join().expect("complete-model thread panicked"), q)
    });
    let max_deviation = compare_runs(&traj_c, &traj_q).unwrap_or_default();
    let report = DiagnosisReport {
        verdict: classify_outcome(&traj_c, &traj_q, SEP_MATCH_TOL),
        max_deviation,
        audits: per_event_audit(model, scenario, &traj_c, cfg),
        sep_complete: traj_c.termination.sep().cloned(),
        sep_qss: traj_q.termination.sep().cloned(),
    };
    (report, traj_c, traj_q)
}
