//! Partitioned two-timescale DAE models.
//!
//! A model provides the fast dynamics `ẋ = f`, the algebraic constraints
//! `0 = g`, the slow continuous dynamics `ż_c = h_c` and the discrete map
//! `z_d⁺ = h_d`, all in physical time. The simulators in [`crate::sim`] are
//! generic over [`HybridModel`], so the same integrators drive the power
//! system and the small analytic fixtures in [`crate::fixtures`].

mod jacobian;
mod power;
mod spectrum;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::netmodel::{EventKind, NetError};

pub use jacobian::{
    fast_spectrum, gamma_s_membership, jacobian_blocks, reduced_fast_jacobian, GammaS, JacobianBlocks, COND_LIMIT,
    STABILITY_MARGIN,
};
pub use power::{ltc_rule, PowerModel, Setpoints};
pub use spectrum::{eigenvalues, SpectrumResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DaeError {
    #[error("algebraic Jacobian is singular (condition estimate {condition:e})")]
    SingularAlgebraic { condition: f64 },
    #[error("state is not on the constraint manifold (|f|={f_norm:e}, |g|={g_norm:e})")]
    NotOnManifold { f_norm: f64, g_norm: f64 },
    #[error("eigenvalue iteration did not converge for a {0}x{0} matrix")]
    EigenNonConvergence(usize),
    #[error(transparent)]
    Event(#[from] NetError),
    #[error("model does not support scenario events")]
    EventsUnsupported,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub zc: usize,
    pub x: usize,
    pub y: usize,
}

impl Dims {
    pub fn continuous(&self) -> usize {
        self.zc + self.x + self.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OxlState {
    pub active: bool,
    /// Time at which the field voltage first exceeded the limit, while the
    /// violation persists.
    pub over_since: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DiscreteState {
    pub taps: Vec<f64>,
    pub oxl: Vec<OxlState>,
}

impl DiscreteState {
    /// Equal tap positions and limiter activations; timers are ignored.
    pub fn same_levels(&self, other: &DiscreteState) -> bool {
        self.taps.len() == other.taps.len()
            && self.taps.iter().zip(&other.taps).all(|(a, b)| (a - b).abs() <= 1e-12)
            && self.oxl.len() == other.oxl.len()
            && self.oxl.iter().zip(&other.oxl).all(|(a, b)| a.active == b.active)
    }

    pub fn values(&self) -> Vec<f64> {
        self.taps
            .iter()
            .copied()
            .chain(self.oxl.iter().map(|o| if o.active { 1.0 } else { 0.0 }))
            .collect()
    }
}

/// The four state partitions at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedState {
    pub t: f64,
    pub zc: DVector<f64>,
    pub zd: DiscreteState,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl PartitionedState {
    pub fn dims(&self) -> Dims {
        Dims {
            zc: self.zc.len(),
            x: self.x.len(),
            y: self.y.len(),
        }
    }

    /// `[z_c; x; y]` stacked.
    pub fn continuous(&self) -> DVector<f64> {
        let d = self.dims();
        let mut w = DVector::zeros(d.continuous());
        w.rows_mut(0, d.zc).copy_from(&self.zc);
        w.rows_mut(d.zc, d.x).copy_from(&self.x);
        w.rows_mut(d.zc + d.x, d.y).copy_from(&self.y);
        w
    }

    pub fn set_continuous(&mut self, w: &DVector<f64>) {
        let d = self.dims();
        self.zc.copy_from(&w.rows(0, d.zc));
        self.x.copy_from(&w.rows(d.zc, d.x));
        self.y.copy_from(&w.rows(d.zc + d.x, d.y));
    }

    pub fn set_fast(&mut self, w: &DVector<f64>) {
        let nx = self.x.len();
        self.x.copy_from(&w.rows(0, nx));
        self.y.copy_from(&w.rows(nx, self.y.len()));
    }

    pub fn fast(&self) -> DVector<f64> {
        let (nx, ny) = (self.x.len(), self.y.len());
        let mut w = DVector::zeros(nx + ny);
        w.rows_mut(0, nx).copy_from(&self.x);
        w.rows_mut(nx, ny).copy_from(&self.y);
        w
    }

    pub fn set_y(&mut self, y: &DVector<f64>) {
        self.y.copy_from(y);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VariableNames {
    pub zc: Vec<String>,
    pub zd: Vec<String>,
    pub x: Vec<String>,
    pub y: Vec<String>,
}

impl VariableNames {
    /// Continuous-variable names in `[z_c; x; y]` order.
    pub fn continuous(&self) -> Vec<String> {
        self.zc.iter().chain(&self.x).chain(&self.y).cloned().collect()
    }
}

pub trait HybridModel {
    /// Mutable network topology (breaker status, faults).
    type Topology: Clone + PartialEq + std::fmt::Debug;
    /// Data derived from a topology and the discrete state, fixed within a
    /// step.
    type Network;

    fn dims(&self) -> Dims;
    fn names(&self) -> VariableNames;

    fn base_topology(&self) -> Self::Topology;
    fn apply_event(&self, topo: &Self::Topology, ev: &EventKind) -> Result<Self::Topology, DaeError>;
    fn network(&self, topo: &Self::Topology, zd: &DiscreteState) -> Self::Network;

    fn eval_f(&self, net: &Self::Network, s: &PartitionedState) -> DVector<f64>;
    fn eval_g(&self, net: &Self::Network, s: &PartitionedState) -> DVector<f64>;
    fn eval_hc(&self, net: &Self::Network, s: &PartitionedState) -> DVector<f64>;

    /// Discrete map applied after an accepted step ending at `now`.
    fn step_hd(&self, s: &PartitionedState, _now: f64) -> DiscreteState {
        s.zd.clone()
    }

    /// First discrete sampling instant strictly after `after`.
    fn next_discrete_instant(&self, _after: f64) -> Option<f64> {
        None
    }

    /// True when no discrete device would act at `s`, whatever the sampling
    /// phase.
    fn hd_fixed_point(&self, _s: &PartitionedState) -> bool {
        true
    }

    /// False for states outside the model's physical domain.
    fn state_valid(&self, _s: &PartitionedState) -> bool {
        true
    }
}

/// Infinity norms of `(f, g, h_c)` at a state.
pub fn residual_norms<M: HybridModel>(model: &M, net: &M::Network, s: &PartitionedState) -> (f64, f64, f64) {
    use crate::solvers::norm_inf;
    (
        norm_inf(&model.eval_f(net, s)),
        norm_inf(&model.eval_g(net, s)),
        norm_inf(&model.eval_hc(net, s)),
    )
}
