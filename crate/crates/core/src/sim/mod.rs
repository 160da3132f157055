//! Fixed-step implicit integration of the complete, QSS and transient
//! models through a scenario.
//!
//! All three share one event loop. Scenario events and discrete sampling
//! instants split steps so that they land exactly on their scheduled time;
//! after any topology or discrete change the algebraic states (and, for
//! QSS, the fast states) are re-solved with the remaining states held.

mod complete;
mod engine;
mod qss;
mod transient;

use serde::Serialize;

use crate::dae::{DiscreteState, HybridModel, PartitionedState};
use crate::solvers::{norm_inf, NewtonConfig, NewtonStatus};

pub use complete::{run_complete, step_trapezoidal};
pub(crate) use engine::solve_long_term;
pub use engine::{project_to_manifold, solve_algebraic, StepFailure};
pub use qss::{qss_step, run_qss, run_qss_with_handoff, QssSingularity};
pub use transient::{run_transient, stability_region_membership, Membership};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Step used within `transient_window` seconds of a disturbance.
    pub h_transient: f64,
    /// Step used otherwise.
    pub h_long: f64,
    pub transient_window: f64,
    pub manifold_tol: f64,
    /// Residual and movement bound for declaring a stable equilibrium.
    pub sep_tol: f64,
    /// Movement is measured over this trailing window.
    pub sep_window: f64,
    /// Movement bound over the final tenth of a membership run.
    pub membership_tol: f64,
    pub max_state_norm: f64,
    /// Stop as soon as a long-term equilibrium is detected.
    pub stop_at_sep: bool,
    /// Integration horizon for stability-region membership runs.
    pub transient_t_max: f64,
    pub newton: NewtonConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            h_transient: 0.005,
            h_long: 0.05,
            transient_window: 5.0,
            manifold_tol: 1e-8,
            sep_tol: 1e-6,
            sep_window: 10.0,
            membership_tol: 1e-5,
            max_state_norm: 1e6,
            stop_at_sep: true,
            transient_t_max: 60.0,
            newton: NewtonConfig::default(),
        }
    }
}

impl SimConfig {
    /// Same step everywhere.
    pub fn uniform(h: f64) -> Self {
        SimConfig {
            h_transient: h,
            h_long: h,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    ReachedTend,
    ConvergedToSep(Box<PartitionedState>),
    SingularityLikely { t: f64, status: Option<NewtonStatus> },
    Diverged { t: f64 },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::ReachedTend => "ReachedTend",
            Termination::ConvergedToSep(_) => "ConvergedToSEP",
            Termination::SingularityLikely { .. } => "SingularityLikely",
            Termination::Diverged { .. } => "Diverged",
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(
            self,
            Termination::SingularityLikely { .. } | Termination::Diverged { .. }
        )
    }

    pub fn sep(&self) -> Option<&PartitionedState> {
        match self {
            Termination::ConvergedToSep(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum EventMarker {
    Scenario {
        description: String,
    },
    DiscreteChange {
        before: DiscreteState,
        after: DiscreteState,
    },
    Handoff,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEvent {
    pub t: f64,
    pub marker: EventMarker,
    /// State right after the event, with algebraic states re-solved. When
    /// that re-solve fails the run ends here and the snapshot keeps the
    /// pre-event algebraic values.
    pub snapshot: PartitionedState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<PartitionedState>,
    pub events: Vec<TrajectoryEvent>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn t_start(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }

    pub fn t_final(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn last(&self) -> &PartitionedState {
        self.samples.last().expect("trajectory has at least one sample")
    }

    /// Events recording a discrete-state transition.
    pub fn discrete_changes(&self) -> impl Iterator<Item = &TrajectoryEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e.marker, EventMarker::DiscreteChange { .. }))
    }

    /// Largest per-variable departure of any sample from the first one.
    pub fn max_drift(&self) -> f64 {
        let w0 = self.samples[0].continuous();
        self.samples
            .iter()
            .map(|s| norm_inf(&(s.continuous() - &w0)))
            .fold(0.0, f64::max)
    }
}

/// Continuous-state infinity norm used by the divergence test.
pub(crate) fn state_norm(s: &PartitionedState) -> f64 {
    norm_inf(&s.continuous())
}

/// Topology after applying every scenario event with `time <= t`.
pub fn topology_at<M: HybridModel>(
    model: &M,
    scenario: &crate::netmodel::ScenarioSpec,
    t: f64,
) -> Result<M::Topology, crate::dae::DaeError> {
    let mut topo = model.base_topology();
    for ev in scenario.events.iter().filter(|e| e.time <= t + engine::TIME_EPS) {
        topo = model.apply_event(&topo, &ev.kind)?;
    }
    Ok(topo)
}
