use thiserror::Error;

use super::engine::{implicit_step, project_to_manifold, run, Mode, RunSpec, StepFailure, TIME_EPS};
use super::{topology_at, EventMarker, SimConfig, Termination, Trajectory, TrajectoryEvent};
use crate::dae::{HybridModel, PartitionedState};
use crate::netmodel::ScenarioSpec;
use crate::solvers::NewtonConfig;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("QSS step failed at t={t}: {failure:?}")]
pub struct QssSingularity {
    pub t: f64,
    pub failure: StepFailure,
}

/// One QSS step: trapezoidal on `z_c` with `(x, y)` on `{f = 0, g = 0}`.
pub fn qss_step<M: HybridModel>(
    model: &M,
    net: &M::Network,
    s: &PartitionedState,
    h: f64,
    newton: &NewtonConfig,
) -> Result<PartitionedState, QssSingularity> {
    implicit_step(model, net, s, h, Mode::Qss, newton).map_err(|failure| QssSingularity { t: s.t + h, failure })
}

/// Integrates the QSS model from `start_state` at `start_time`. Scenario
/// events up to `start_time` are taken as already applied. The start state
/// is first projected onto the fast equilibrium manifold.
pub fn run_qss<M: HybridModel>(
    model: &M,
    scenario: &ScenarioSpec,
    cfg: &SimConfig,
    start_state: &PartitionedState,
    start_time: f64,
) -> Trajectory {
    let mut start = start_state.clone();
    start.t = start_time;
    let fail = |start: PartitionedState, status| Trajectory {
        samples: vec![start],
        events: Vec::new(),
        termination: Termination::SingularityLikely { t: start_time, status },
    };
    let Ok(topology) = topology_at(model, scenario, start_time) else {
        return fail(start, None);
    };
    let net = model.network(&topology, &start.zd);
    let projected = match project_to_manifold(model, &net, &start, &cfg.newton) {
        Ok(p) => p,
        Err(e) => return fail(start, Some(e.status)),
    };
    let first = scenario
        .events
        .iter()
        .position(|e| e.time > start_time + TIME_EPS)
        .unwrap_or(scenario.events.len());
    let mut traj = run(RunSpec {
        model,
        mode: Mode::Qss,
        events: &scenario.events[first..],
        start: projected.clone(),
        topology,
        t_end: scenario.t_end,
        cfg,
        fine_until: start_time,
    });
    traj.events.insert(
        0,
        TrajectoryEvent {
            t: start_time,
            marker: EventMarker::Handoff,
            snapshot: projected,
        },
    );
    traj
}

/// Complete model up to the scenario's `qss_start` (if any), QSS afterwards.
/// The returned trajectory holds both pieces; the sample at the hand-off
/// time is the manifold projection.
pub fn run_qss_with_handoff<M: HybridModel>(
    model: &M,
    scenario: &ScenarioSpec,
    cfg: &SimConfig,
    initial: &PartitionedState,
) -> Trajectory {
    let ts = match scenario.qss_start {
        Some(ts) if ts > initial.t + TIME_EPS => ts,
        _ => return run_qss(model, scenario, cfg, initial, initial.t),
    };
    let prefix_scenario = ScenarioSpec {
        t_end: ts,
        ..scenario.clone()
    };
    let prefix_cfg = SimConfig {
        stop_at_sep: false,
        ..cfg.clone()
    };
    let mut prefix = super::run_complete(model, &prefix_scenario, &prefix_cfg, initial);
    if prefix.termination != Termination::ReachedTend {
        return prefix;
    }
    let qss = run_qss(model, scenario, cfg, prefix.last(), ts);
    prefix.samples.pop();
    prefix.samples.extend(qss.samples);
    prefix.events.extend(qss.events);
    prefix.termination = qss.termination;
    prefix
}
