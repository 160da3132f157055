//! Serializable system and scenario descriptions.
//!
//! All electrical quantities are per-unit on the system base, times are in
//! seconds. Device cross-references use string ids and are resolved to
//! indices by [`super::parse_system`].

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: String,
    pub base_kv: f64,
    pub kind: BusKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_set: Option<f64>,
    /// Static demand, converted to a constant impedance at initialization.
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BranchStatus {
    #[default]
    Closed,
    Open,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_shunt: f64,
    /// Bus on which an LTC ratio acts. Defaults to `from` for LTC branches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap_side: Option<String>,
    #[serde(default)]
    pub status: BranchStatus,
}

/// One-axis synchronous machine. Saliency is neglected (X_q = X'_d).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub id: String,
    pub bus: String,
    /// Scheduled active power used by the initial power flow.
    pub p_set: f64,
    pub h: f64,
    pub d: f64,
    pub xd: f64,
    pub xd_prime: f64,
    pub td0_prime: f64,
    pub omega_s: f64,
}

/// First-order exciter. The voltage reference is back-solved at
/// initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvrParams {
    pub generator: String,
    pub ka: f64,
    pub te: f64,
    pub efd_min: f64,
    pub efd_max: f64,
}

/// First-order droop governor. `P_m0` is back-solved at initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovParams {
    pub generator: String,
    pub tg: f64,
    pub kg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OxlParams {
    pub generator: String,
    pub efd_limit: f64,
    pub delay_s: f64,
}

/// Exponential-recovery load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErlParams {
    pub id: String,
    pub bus: String,
    pub p0: f64,
    pub q0: f64,
    pub v0: f64,
    pub alpha_s: f64,
    pub alpha_t: f64,
    pub beta_s: f64,
    pub beta_t: f64,
    pub tp: f64,
    pub tq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtcParams {
    pub id: String,
    pub branch: String,
    pub m0: f64,
    pub delta_m: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub v_ref: f64,
    pub deadband: f64,
    pub controlled_bus: String,
    pub period_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticLoad {
    pub bus: String,
    pub p: f64,
    pub q: f64,
}

/// Raw system file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub schema: u32,
    pub buses: Vec<BusSpec>,
    #[serde(default)]
    pub branches: Vec<BranchSpec>,
    #[serde(default)]
    pub generators: Vec<GenParams>,
    #[serde(default)]
    pub avrs: Vec<AvrParams>,
    #[serde(default)]
    pub governors: Vec<GovParams>,
    #[serde(default)]
    pub oxls: Vec<OxlParams>,
    #[serde(default)]
    pub erl_loads: Vec<ErlParams>,
    #[serde(default)]
    pub ltcs: Vec<LtcParams>,
    #[serde(default)]
    pub static_loads: Vec<StaticLoad>,
}

fn default_fault_g() -> f64 {
    1e4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    ApplyFault {
        bus: String,
        #[serde(default = "default_fault_g")]
        g: f64,
        #[serde(default)]
        b: f64,
    },
    ClearFault {
        bus: String,
    },
    OpenBranch {
        branch: String,
    },
    CloseBranch {
        branch: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl std::fmt::Display for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventKind::ApplyFault { bus, g, b } => write!(f, "ApplyFault({bus}, {g}+j{b})"),
            EventKind::ClearFault { bus } => write!(f, "ClearFault({bus})"),
            EventKind::OpenBranch { branch } => write!(f, "OpenBranch({branch})"),
            EventKind::CloseBranch { branch } => write!(f, "CloseBranch({branch})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub t_end: f64,
    #[serde(default)]
    pub qss_start: Option<f64>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

impl ScenarioSpec {
    pub fn quiet(t_end: f64) -> Self {
        ScenarioSpec {
            t_end,
            qss_start: None,
            events: Vec::new(),
        }
    }
}
