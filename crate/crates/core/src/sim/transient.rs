use serde::Serialize;

use super::engine::{project_to_manifold, run, solve_algebraic, Mode, RunSpec};
use super::{SimConfig, Termination, Trajectory};
use crate::dae::{gamma_s_membership, GammaS, HybridModel, PartitionedState};
use crate::solvers::norm_inf;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Membership {
    /// The frozen-slow trajectory settles at a point of the stable
    /// subset of the manifold.
    Inside,
    Outside {
        reason: String,
    },
    Inconclusive {
        reason: String,
    },
}

/// Integrates the frozen-slow model from `snapshot` for
/// `cfg.transient_t_max` seconds. `z_c` and `z_d` stay at their snapshot
/// values and `y` is re-solved first, so the run starts consistent.
pub fn run_transient<M: HybridModel>(
    model: &M,
    topology: &M::Topology,
    snapshot: &PartitionedState,
    cfg: &SimConfig,
) -> Trajectory {
    let net = model.network(topology, &snapshot.zd);
    let start = match solve_algebraic(model, &net, snapshot, &cfg.newton) {
        Ok(s) => s,
        Err(e) => {
            return Trajectory {
                samples: vec![snapshot.clone()],
                events: Vec::new(),
                termination: Termination::SingularityLikely {
                    t: snapshot.t,
                    status: Some(e.status),
                },
            }
        }
    };
    run(RunSpec {
        model,
        mode: Mode::Transient,
        events: &[],
        start,
        topology: topology.clone(),
        t_end: snapshot.t + cfg.transient_t_max,
        cfg,
        fine_until: snapshot.t + cfg.transient_window,
    })
}

/// Whether the frozen-slow trajectory from `snapshot` is attracted to the
/// stable part of the manifold. Also returns the transient trajectory.
pub fn stability_region_membership<M: HybridModel>(
    model: &M,
    topology: &M::Topology,
    snapshot: &PartitionedState,
    cfg: &SimConfig,
) -> (Membership, Trajectory) {
    let traj = run_transient(model, topology, snapshot, cfg);
    let verdict = classify(model, topology, &traj, cfg);
    (verdict, traj)
}

fn classify<M: HybridModel>(model: &M, topology: &M::Topology, traj: &Trajectory, cfg: &SimConfig) -> Membership {
    match &traj.termination {
        Termination::Diverged { t } => {
            return Membership::Outside {
                reason: format!("diverged at t={t:.4}"),
            }
        }
        Termination::SingularityLikely { t, .. } => {
            return Membership::Outside {
                reason: format!("algebraic singularity at t={t:.4}"),
            }
        }
        _ => {}
    }
    let last = traj.last();
    let t_from = last.t - 0.1 * cfg.transient_t_max;
    let w_last = last.continuous();
    let movement = traj
        .samples
        .iter()
        .filter(|s| s.t >= t_from)
        .map(|s| norm_inf(&(s.continuous() - &w_last)))
        .fold(0.0, f64::max);
    if movement > cfg.membership_tol {
        return Membership::Inconclusive {
            reason: format!("still moving by {movement:.3e} over the final 10% of the run"),
        };
    }
    let net = model.network(topology, &last.zd);
    let Ok(point) = project_to_manifold(model, &net, last, &cfg.newton) else {
        return Membership::Inconclusive {
            reason: "settled point could not be refined onto the manifold".into(),
        };
    };
    match gamma_s_membership(model, &net, &point, cfg.manifold_tol) {
        Ok(GammaS::InGammaS) => Membership::Inside,
        Ok(other) => Membership::Inconclusive {
            reason: format!("settled at a point outside the stable subset ({other:?})"),
        },
        Err(e) => Membership::Inconclusive { reason: e.to_string() },
    }
}
