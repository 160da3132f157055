use super::engine::{implicit_step, run, Mode, RunSpec, StepFailure};
use super::{SimConfig, Trajectory};
use crate::dae::{HybridModel, PartitionedState};
use crate::netmodel::ScenarioSpec;
use crate::solvers::NewtonConfig;

/// One trapezoidal step of the complete model with `z_d` held.
pub fn step_trapezoidal<M: HybridModel>(
    model: &M,
    net: &M::Network,
    s: &PartitionedState,
    h: f64,
    newton: &NewtonConfig,
) -> Result<PartitionedState, StepFailure> {
    implicit_step(model, net, s, h, Mode::Complete, newton)
}

/// Integrates the complete model from `initial` through the scenario.
/// `initial` must satisfy `g = 0` for the base topology.
pub fn run_complete<M: HybridModel>(
    model: &M,
    scenario: &ScenarioSpec,
    cfg: &SimConfig,
    initial: &PartitionedState,
) -> Trajectory {
    run(RunSpec {
        model,
        mode: Mode::Complete,
        events: &scenario.events,
        start: initial.clone(),
        topology: model.base_topology(),
        t_end: scenario.t_end,
        cfg,
        fine_until: initial.t,
    })
}
