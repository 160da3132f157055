//! System and scenario descriptions, validation, and the network admittance
//! matrix.

mod admittance;
pub mod spec;

use std::collections::HashMap;

use thiserror::Error;

pub use admittance::{apply_event, build_admittance, islanded_buses, AdmittanceMatrix, Overlay};
pub use spec::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedSchema(u32),
    #[error("unknown bus id '{id}' referenced by {context}")]
    UnknownBus { id: String, context: String },
    #[error("unknown branch id '{id}' referenced by {context}")]
    UnknownBranch { id: String, context: String },
    #[error("unknown generator id '{id}' referenced by {context}")]
    UnknownGenerator { id: String, context: String },
    #[error("duplicate {kind} id '{id}'")]
    Duplicate { kind: &'static str, id: String },
    #[error("{field} {message}")]
    Invariant { field: String, message: String },
    #[error("fault at bus '{0}' is not active")]
    FaultNotActive(String),
}

fn invariant(field: impl Into<String>, message: impl Into<String>) -> NetError {
    NetError::Invariant {
        field: field.into(),
        message: message.into(),
    }
}

/// Branch with its end points resolved to bus indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedBranch {
    pub from: usize,
    pub to: usize,
    /// `Some(true)` when an LTC ratio acts on the `from` end.
    pub tap_at_from: Option<bool>,
    pub ltc: Option<usize>,
}

/// Validated, immutable system description.
///
/// Only obtainable through [`parse_system`] or [`SystemSpec::from_file`], so
/// every cross-reference is known to resolve.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    file: SystemFile,
    bus_index: HashMap<String, usize>,
    branch_index: HashMap<String, usize>,
    branches: Vec<ResolvedBranch>,
    gen_bus: Vec<usize>,
    gen_avr: Vec<usize>,
    gen_gov: Vec<Option<usize>>,
    gen_oxl: Vec<Option<usize>>,
    erl_bus: Vec<usize>,
    ltc_branch: Vec<usize>,
    ltc_bus: Vec<usize>,
    static_load: Vec<(f64, f64)>,
    slack: Vec<usize>,
}

pub fn parse_system(text: &[u8]) -> Result<SystemSpec, NetError> {
    let file: SystemFile = serde_json::from_slice(text).map_err(|e| NetError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    SystemSpec::from_file(file)
}

pub fn serialize_system(sys: &SystemSpec) -> String {
    serde_json::to_string_pretty(&sys.file).expect("system file is always serializable")
}

fn index_of<'a, I>(kind: &'static str, ids: I) -> Result<HashMap<String, usize>, NetError>
where
    I: Iterator<Item = &'a String>,
{
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(NetError::Duplicate { kind, id: id.clone() });
        }
    }
    Ok(map)
}

impl SystemSpec {
    pub fn from_file(file: SystemFile) -> Result<Self, NetError> {
        if file.schema != SCHEMA_VERSION {
            return Err(NetError::UnsupportedSchema(file.schema));
        }
        if file.buses.is_empty() {
            return Err(invariant("buses", "must not be empty"));
        }
        let bus_index = index_of("bus", file.buses.iter().map(|b| &b.id))?;
        let branch_index = index_of("branch", file.branches.iter().map(|b| &b.id))?;
        let gen_index = index_of("generator", file.generators.iter().map(|g| &g.id))?;
        index_of("erl load", file.erl_loads.iter().map(|l| &l.id))?;
        index_of("ltc", file.ltcs.iter().map(|l| &l.id))?;

        let bus = |id: &str, context: &str| {
            bus_index.get(id).copied().ok_or_else(|| NetError::UnknownBus {
                id: id.to_string(),
                context: context.to_string(),
            })
        };
        let gen = |id: &str, context: &str| {
            gen_index.get(id).copied().ok_or_else(|| NetError::UnknownGenerator {
                id: id.to_string(),
                context: context.to_string(),
            })
        };

        let mut slack = Vec::new();
        for (i, b) in file.buses.iter().enumerate() {
            let f = |name: &str| format!("BusSpec.{name}");
            if !(b.base_kv > 0.0) {
                return Err(invariant(f("base_kv"), "must be > 0"));
            }
            match (b.kind, b.v_set) {
                (BusKind::PQ, _) => {}
                (_, None) => return Err(invariant(f("v_set"), format!("required for bus '{}'", b.id))),
                (_, Some(v)) if !(v > 0.5 && v < 1.5) => return Err(invariant(f("v_set"), "must lie in (0.5, 1.5)")),
                _ => {}
            }
            if b.kind == BusKind::Slack {
                slack.push(i);
            }
        }

        let mut branches = Vec::with_capacity(file.branches.len());
        for br in &file.branches {
            let ctx = format!("branch '{}'", br.id);
            let from = bus(&br.from, &ctx)?;
            let to = bus(&br.to, &ctx)?;
            if from == to {
                return Err(invariant(
                    "BranchSpec.to",
                    format!("must differ from 'from' on branch '{}'", br.id),
                ));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(invariant(
                    "BranchSpec.x",
                    format!("r and x both zero on branch '{}'", br.id),
                ));
            }
            let tap_at_from = match &br.tap_side {
                None => None,
                Some(side) => {
                    let s = bus(side, &ctx)?;
                    if s != from && s != to {
                        return Err(invariant(
                            "BranchSpec.tap_side",
                            format!("must be an end of branch '{}'", br.id),
                        ));
                    }
                    Some(s == from)
                }
            };
            branches.push(ResolvedBranch {
                from,
                to,
                tap_at_from,
                ltc: None,
            });
        }

        let mut gen_bus = Vec::new();
        let mut buses_with_gen = vec![false; file.buses.len()];
        for g in &file.generators {
            let f = |name: &str| format!("GenParams.{name}");
            let b = bus(&g.bus, &format!("generator '{}'", g.id))?;
            if file.buses[b].kind != BusKind::PV {
                return Err(invariant(
                    f("bus"),
                    format!("generator '{}' must sit on a PV bus", g.id),
                ));
            }
            if std::mem::replace(&mut buses_with_gen[b], true) {
                return Err(invariant(
                    f("bus"),
                    format!("more than one generator on bus '{}'", g.bus),
                ));
            }
            for (name, v) in [
                ("h", g.h),
                ("xd", g.xd),
                ("xd_prime", g.xd_prime),
                ("td0_prime", g.td0_prime),
                ("omega_s", g.omega_s),
            ] {
                if !(v > 0.0) {
                    return Err(invariant(f(name), "must be > 0"));
                }
            }
            if g.d < 0.0 {
                return Err(invariant(f("d"), "must be >= 0"));
            }
            if g.xd < g.xd_prime {
                return Err(invariant(f("xd"), "must be >= xd_prime"));
            }
            gen_bus.push(b);
        }
        for (i, b) in file.buses.iter().enumerate() {
            if b.kind == BusKind::PV && !buses_with_gen[i] {
                return Err(invariant("BusSpec.kind", format!("PV bus '{}' has no generator", b.id)));
            }
        }

        let ng = file.generators.len();
        let mut gen_avr = vec![None; ng];
        for (k, a) in file.avrs.iter().enumerate() {
            let g = gen(&a.generator, "avr")?;
            if !(a.ka > 0.0) {
                return Err(invariant("AvrParams.ka", "must be > 0"));
            }
            if !(a.te > 0.0) {
                return Err(invariant("AvrParams.te", "must be > 0"));
            }
            if !(a.efd_min < a.efd_max) {
                return Err(invariant("AvrParams.efd_min", "must be < efd_max"));
            }
            if gen_avr[g].replace(k).is_some() {
                return Err(invariant(
                    "AvrParams.generator",
                    format!("duplicate avr for '{}'", a.generator),
                ));
            }
        }
        let gen_avr = gen_avr
            .into_iter()
            .enumerate()
            .map(|(g, a)| {
                a.ok_or_else(|| {
                    invariant(
                        "AvrParams.generator",
                        format!("generator '{}' has no avr", file.generators[g].id),
                    )
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut gen_gov = vec![None; ng];
        for (k, gv) in file.governors.iter().enumerate() {
            let g = gen(&gv.generator, "governor")?;
            if !(gv.tg > 0.0) {
                return Err(invariant("GovParams.tg", "must be > 0"));
            }
            if gv.kg < 0.0 {
                return Err(invariant("GovParams.kg", "must be >= 0"));
            }
            if gen_gov[g].replace(k).is_some() {
                return Err(invariant(
                    "GovParams.generator",
                    format!("duplicate governor for '{}'", gv.generator),
                ));
            }
        }

        let mut gen_oxl = vec![None; ng];
        for (k, o) in file.oxls.iter().enumerate() {
            let g = gen(&o.generator, "oxl")?;
            if !(o.delay_s >= 0.0) {
                return Err(invariant("OxlParams.delay_s", "must be >= 0"));
            }
            if !(o.efd_limit > 0.0) {
                return Err(invariant("OxlParams.efd_limit", "must be > 0"));
            }
            if gen_oxl[g].replace(k).is_some() {
                return Err(invariant(
                    "OxlParams.generator",
                    format!("duplicate oxl for '{}'", o.generator),
                ));
            }
        }

        let mut erl_bus = Vec::new();
        for l in &file.erl_loads {
            let b = bus(&l.bus, &format!("erl load '{}'", l.id))?;
            if file.buses[b].kind == BusKind::Slack {
                return Err(invariant("ErlParams.bus", "must not be the slack bus"));
            }
            for (name, v) in [("tp", l.tp), ("tq", l.tq), ("v0", l.v0)] {
                if !(v > 0.0) {
                    return Err(invariant(format!("ErlParams.{name}"), "must be > 0"));
                }
            }
            erl_bus.push(b);
        }

        let mut ltc_branch = Vec::new();
        let mut ltc_bus = Vec::new();
        for (k, l) in file.ltcs.iter().enumerate() {
            let ctx = format!("ltc '{}'", l.id);
            let br = branch_index
                .get(&l.branch)
                .copied()
                .ok_or_else(|| NetError::UnknownBranch {
                    id: l.branch.clone(),
                    context: ctx.clone(),
                })?;
            let cb = bus(&l.controlled_bus, &ctx)?;
            let f = |name: &str| format!("LtcParams.{name}");
            if !(l.delta_m > 0.0) {
                return Err(invariant(f("delta_m"), "must be > 0"));
            }
            if !(l.deadband > 0.0) {
                return Err(invariant(f("deadband"), "must be > 0"));
            }
            if !(l.period_s > 0.0) {
                return Err(invariant(f("period_s"), "must be > 0"));
            }
            if !(l.m_min > 0.0) {
                return Err(invariant(f("m_min"), "must be > 0"));
            }
            if !(l.m_min <= l.m0 && l.m0 <= l.m_max) {
                return Err(invariant(f("m0"), "must lie in [m_min, m_max]"));
            }
            let rb = &mut branches[br];
            if rb.ltc.replace(k).is_some() {
                return Err(invariant(
                    f("branch"),
                    format!("branch '{}' carries two ltcs", l.branch),
                ));
            }
            if rb.tap_at_from.is_none() {
                rb.tap_at_from = Some(true);
            }
            ltc_branch.push(br);
            ltc_bus.push(cb);
        }
        for (br, rb) in file.branches.iter().zip(&branches) {
            if br.tap_side.is_some() && rb.ltc.is_none() {
                return Err(invariant(
                    "BranchSpec.tap_side",
                    format!("branch '{}' has a tap side but no ltc", br.id),
                ));
            }
        }

        let mut static_load: Vec<(f64, f64)> = file.buses.iter().map(|b| (b.p_load, b.q_load)).collect();
        for s in &file.static_loads {
            let b = bus(&s.bus, "static load")?;
            static_load[b].0 += s.p;
            static_load[b].1 += s.q;
        }
        for &s in &slack {
            if static_load[s] != (0.0, 0.0) {
                return Err(invariant("BusSpec.p_load", "slack bus must not carry load"));
            }
        }

        let sys = SystemSpec {
            file,
            bus_index,
            branch_index,
            branches,
            gen_bus,
            gen_avr,
            gen_gov,
            gen_oxl,
            erl_bus,
            ltc_branch,
            ltc_bus,
            static_load,
            slack,
        };
        sys.check_islands(&Overlay::new(&sys))?;
        Ok(sys)
    }

    fn check_islands(&self, overlay: &Overlay) -> Result<(), NetError> {
        let comp = admittance::components(self, overlay);
        let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
        let mut slack_count = vec![0usize; n_comp];
        for &s in &self.slack {
            slack_count[comp[s]] += 1;
        }
        for (c, &count) in slack_count.iter().enumerate() {
            if count != 1 {
                let bus = comp.iter().position(|&k| k == c).unwrap();
                return Err(invariant(
                    "BusSpec.kind",
                    format!(
                        "island containing bus '{}' has {count} slack buses (expected 1)",
                        self.file.buses[bus].id
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn raw(&self) -> &SystemFile {
        &self.file
    }
    pub fn n_bus(&self) -> usize {
        self.file.buses.len()
    }
    pub fn buses(&self) -> &[BusSpec] {
        &self.file.buses
    }
    pub fn branches(&self) -> &[BranchSpec] {
        &self.file.branches
    }
    pub fn resolved_branches(&self) -> &[ResolvedBranch] {
        &self.branches
    }
    pub fn generators(&self) -> &[GenParams] {
        &self.file.generators
    }
    pub fn erl_loads(&self) -> &[ErlParams] {
        &self.file.erl_loads
    }
    pub fn ltcs(&self) -> &[LtcParams] {
        &self.file.ltcs
    }
    pub fn bus_idx(&self, id: &str) -> Option<usize> {
        self.bus_index.get(id).copied()
    }
    pub fn branch_idx(&self, id: &str) -> Option<usize> {
        self.branch_index.get(id).copied()
    }
    pub fn gen_bus(&self, g: usize) -> usize {
        self.gen_bus[g]
    }
    pub fn avr(&self, g: usize) -> &AvrParams {
        &self.file.avrs[self.gen_avr[g]]
    }
    pub fn governor(&self, g: usize) -> Option<&GovParams> {
        self.gen_gov[g].map(|k| &self.file.governors[k])
    }
    pub fn oxl(&self, g: usize) -> Option<&OxlParams> {
        self.gen_oxl[g].map(|k| &self.file.oxls[k])
    }
    pub fn oxl_index(&self, g: usize) -> Option<usize> {
        self.gen_oxl[g]
    }
    pub fn oxl_generator(&self, k: usize) -> usize {
        self.gen_oxl.iter().position(|o| *o == Some(k)).expect("oxl resolved")
    }
    pub fn erl_bus(&self, l: usize) -> usize {
        self.erl_bus[l]
    }
    pub fn ltc_branch(&self, k: usize) -> usize {
        self.ltc_branch[k]
    }
    pub fn ltc_controlled_bus(&self, k: usize) -> usize {
        self.ltc_bus[k]
    }
    /// Static (P, Q) demand at each bus, including `static_loads` entries.
    pub fn static_load(&self, bus: usize) -> (f64, f64) {
        self.static_load[bus]
    }
    pub fn slack_buses(&self) -> &[usize] {
        &self.slack
    }
    pub fn initial_taps(&self) -> Vec<f64> {
        self.file.ltcs.iter().map(|l| l.m0).collect()
    }
}

pub fn parse_scenario(text: &[u8]) -> Result<ScenarioSpec, NetError> {
    serde_json::from_slice(text).map_err(|e| NetError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Checks a scenario against a system: event times lie in `[0, t_end]` in
/// non-decreasing order, references resolve, and every `ClearFault` clears
/// an active fault.
pub fn validate_scenario(sys: &SystemSpec, sc: &ScenarioSpec) -> Result<(), NetError> {
    if !(sc.t_end > 0.0) {
        return Err(invariant("ScenarioSpec.t_end", "must be > 0"));
    }
    if let Some(q) = sc.qss_start {
        if !(0.0..=sc.t_end).contains(&q) {
            return Err(invariant("ScenarioSpec.qss_start", "must lie in [0, t_end]"));
        }
    }
    let mut overlay = Overlay::new(sys);
    let mut last = 0.0;
    for ev in &sc.events {
        if !(ev.time >= 0.0 && ev.time <= sc.t_end) {
            return Err(invariant("EventSpec.time", format!("{} outside [0, t_end]", ev.time)));
        }
        if ev.time < last {
            return Err(invariant("EventSpec.time", "events must be in time order"));
        }
        last = ev.time;
        overlay = apply_event(sys, &overlay, &ev.kind)?;
    }
    Ok(())
}
