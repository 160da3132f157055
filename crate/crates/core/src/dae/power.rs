//! Residuals of the power-system model.
//!
//! Fast states per generator are `(δ, ω, E'_q, E_fd)`; slow continuous states
//! are the governor mechanical power and the exponential-recovery load
//! states `(x_p, x_q)`; discrete states are LTC ratios and OXL timers.
//! Algebraic states are bus voltage magnitudes followed by angles. The slack
//! bus is an infinite bus with fixed voltage and zero angle.

use nalgebra::DVector;
use num_complex::Complex64;

use super::{DaeError, Dims, DiscreteState, HybridModel, OxlState, PartitionedState, VariableNames};
use crate::netmodel::{
    apply_event, build_admittance, AdmittanceMatrix, BusKind, EventKind, LtcParams, Overlay, SystemSpec,
};

/// Tap law with a symmetric deadband around `v_ref`; the result is clamped
/// to `[m_min, m_max]`.
pub fn ltc_rule(p: &LtcParams, m: f64, v: f64) -> f64 {
    if v > p.v_ref + p.deadband && m < p.m_max {
        (m + p.delta_m).min(p.m_max)
    } else if v < p.v_ref - p.deadband && m > p.m_min {
        (m - p.delta_m).max(p.m_min)
    } else {
        m
    }
}

const INSTANT_TOL: f64 = 1e-9;

fn is_sampling_instant(now: f64, period: f64) -> bool {
    let k = (now / period).round();
    k >= 1.0 && (now - k * period).abs() <= INSTANT_TOL * period.max(1.0)
}

/// Values fixed by initialization so that the starting point is an exact
/// equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoints {
    /// AVR voltage reference per generator.
    pub v_ref: Vec<f64>,
    /// Governor reference per generator; the constant mechanical power for
    /// ungoverned machines.
    pub pm0: Vec<f64>,
    /// Constant-impedance shunt replacing static loads, per bus.
    pub load_shunt: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct PowerModel {
    sys: SystemSpec,
    set: Setpoints,
    gov_slot: Vec<Option<usize>>,
    erl_slot: Vec<usize>,
    n_zc: usize,
}

impl PowerModel {
    pub fn new(sys: SystemSpec, set: Setpoints) -> Self {
        let ng = sys.generators().len();
        let mut n_zc = 0;
        let gov_slot = (0..ng)
            .map(|g| {
                sys.governor(g).map(|_| {
                    n_zc += 1;
                    n_zc - 1
                })
            })
            .collect();
        let erl_slot = (0..sys.erl_loads().len())
            .map(|_| {
                n_zc += 2;
                n_zc - 2
            })
            .collect();
        PowerModel {
            sys,
            set,
            gov_slot,
            erl_slot,
            n_zc,
        }
    }

    pub fn system(&self) -> &SystemSpec {
        &self.sys
    }

    pub fn setpoints(&self) -> &Setpoints {
        &self.set
    }

    pub fn gov_slot(&self, g: usize) -> Option<usize> {
        self.gov_slot[g]
    }

    pub fn erl_slot(&self, l: usize) -> usize {
        self.erl_slot[l]
    }

    pub fn v(&self, s: &PartitionedState, bus: usize) -> f64 {
        s.y[bus]
    }

    pub fn theta(&self, s: &PartitionedState, bus: usize) -> f64 {
        s.y[self.sys.n_bus() + bus]
    }

    pub fn y_index_v(&self, bus: usize) -> usize {
        bus
    }

    pub fn efd(&self, s: &PartitionedState, g: usize) -> f64 {
        s.x[4 * g + 3]
    }

    fn pm(&self, s: &PartitionedState, g: usize) -> f64 {
        match self.gov_slot[g] {
            Some(k) => s.zc[k],
            None => self.set.pm0[g],
        }
    }

    /// Generator terminal injection `(P, Q)` and d-axis current.
    fn stator(&self, s: &PartitionedState, g: usize) -> (f64, f64, f64) {
        let gp = &self.sys.generators()[g];
        let b = self.sys.gen_bus(g);
        let (delta, eq) = (s.x[4 * g], s.x[4 * g + 2]);
        let (v, th) = (self.v(s, b), self.theta(s, b));
        let (sin, cos) = (delta - th).sin_cos();
        let p = eq * v * sin / gp.xd_prime;
        let q = (eq * v * cos - v * v) / gp.xd_prime;
        let id = (eq - v * cos) / gp.xd_prime;
        (p, q, id)
    }

    /// Field-voltage ceiling, lowered to the OXL limit once it has acted.
    fn efd_ceiling(&self, zd: &DiscreteState, g: usize) -> f64 {
        let avr = self.sys.avr(g);
        match (self.sys.oxl(g), self.sys.oxl_index(g)) {
            (Some(o), Some(k)) if zd.oxl[k].active => avr.efd_max.min(o.efd_limit),
            _ => avr.efd_max,
        }
    }

    fn erl_demand(&self, s: &PartitionedState, l: usize) -> (f64, f64) {
        let p = &self.sys.erl_loads()[l];
        let v = self.v(s, self.sys.erl_bus(l)) / p.v0;
        let k = self.erl_slot[l];
        (
            s.zc[k] + p.p0 * v.powf(p.alpha_t),
            s.zc[k + 1] + p.q0 * v.powf(p.beta_t),
        )
    }

    /// Complex power `V·conj(Y·V)` drawn by the network at every bus.
    fn network_flow(net: &AdmittanceMatrix, v: &[f64], th: &[f64]) -> Vec<Complex64> {
        let n = v.len();
        let vc: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(v[i], th[i])).collect();
        (0..n)
            .map(|i| {
                let mut cur = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    let yij = net.y[(i, j)];
                    if yij.re != 0.0 || yij.im != 0.0 {
                        cur += yij * vc[j];
                    }
                }
                vc[i] * cur.conj()
            })
            .collect()
    }

    /// Admittance including the constant-impedance static loads.
    pub fn admittance(&self, overlay: &Overlay, taps: &[f64]) -> AdmittanceMatrix {
        let mut y = build_admittance(&self.sys, taps, overlay);
        for (i, ys) in self.set.load_shunt.iter().enumerate() {
            y.add_shunt(i, *ys);
        }
        y
    }

    pub fn initial_discrete(&self) -> DiscreteState {
        DiscreteState {
            taps: self.sys.initial_taps(),
            oxl: vec![
                OxlState {
                    active: false,
                    over_since: None
                };
                self.sys.raw().oxls.len()
            ],
        }
    }

    /// Discrete map: LTCs sampled at `now` apply [`ltc_rule`]; OXL timers
    /// advance and latch once the violation has lasted `delay_s`.
    pub fn discrete_update(&self, s: &PartitionedState, now: f64, all_ltcs: bool) -> DiscreteState {
        let mut zd = s.zd.clone();
        for (k, p) in self.sys.ltcs().iter().enumerate() {
            if all_ltcs || is_sampling_instant(now, p.period_s) {
                let v = self.v(s, self.sys.ltc_controlled_bus(k));
                zd.taps[k] = ltc_rule(p, zd.taps[k], v);
            }
        }
        for (k, o) in self.sys.raw().oxls.iter().enumerate() {
            let st = &mut zd.oxl[k];
            if st.active {
                continue;
            }
            let efd = self.efd(s, self.sys.oxl_generator(k));
            if efd > o.efd_limit {
                let since = *st.over_since.get_or_insert(now);
                if now - since >= o.delay_s - INSTANT_TOL {
                    st.active = true;
                    st.over_since = None;
                }
            } else {
                st.over_since = None;
            }
        }
        zd
    }
}

impl HybridModel for PowerModel {
    type Topology = Overlay;
    type Network = AdmittanceMatrix;

    fn dims(&self) -> Dims {
        Dims {
            zc: self.n_zc,
            x: 4 * self.sys.generators().len(),
            y: 2 * self.sys.n_bus(),
        }
    }

    fn names(&self) -> VariableNames {
        let mut n = VariableNames::default();
        let gens = self.sys.generators();
        n.zc = vec![String::new(); self.n_zc];
        for (g, gp) in gens.iter().enumerate() {
            if let Some(k) = self.gov_slot[g] {
                n.zc[k] = format!("zc.{}.pm", gp.id);
            }
            for v in ["delta", "omega", "eqp", "efd"] {
                n.x.push(format!("x.{}.{v}", gp.id));
            }
        }
        for (l, lp) in self.sys.erl_loads().iter().enumerate() {
            n.zc[self.erl_slot[l]] = format!("zc.{}.xp", lp.id);
            n.zc[self.erl_slot[l] + 1] = format!("zc.{}.xq", lp.id);
        }
        n.zd = self
            .sys
            .ltcs()
            .iter()
            .map(|l| format!("zd.{}.m", l.id))
            .chain(
                (0..self.sys.raw().oxls.len()).map(|k| format!("zd.{}.oxl_active", gens[self.sys.oxl_generator(k)].id)),
            )
            .collect();
        let buses = self.sys.buses();
        n.y = buses
            .iter()
            .map(|b| format!("y.{}.v", b.id))
            .chain(buses.iter().map(|b| format!("y.{}.theta", b.id)))
            .collect();
        n
    }

    fn base_topology(&self) -> Overlay {
        Overlay::new(&self.sys)
    }

    fn apply_event(&self, topo: &Overlay, ev: &EventKind) -> Result<Overlay, DaeError> {
        Ok(apply_event(&self.sys, topo, ev)?)
    }

    fn network(&self, topo: &Overlay, zd: &DiscreteState) -> AdmittanceMatrix {
        self.admittance(topo, &zd.taps)
    }

    fn eval_f(&self, _net: &AdmittanceMatrix, s: &PartitionedState) -> DVector<f64> {
        let gens = self.sys.generators();
        let mut f = DVector::zeros(4 * gens.len());
        for (g, gp) in gens.iter().enumerate() {
            let (omega, eq, efd) = (s.x[4 * g + 1], s.x[4 * g + 2], s.x[4 * g + 3]);
            let (pe, _, id) = self.stator(s, g);
            let avr = self.sys.avr(g);
            let v = self.v(s, self.sys.gen_bus(g));
            let command = (avr.ka * (self.set.v_ref[g] - v)).clamp(avr.efd_min, self.efd_ceiling(&s.zd, g));
            f[4 * g] = gp.omega_s * (omega - 1.0);
            f[4 * g + 1] = (self.pm(s, g) - pe - gp.d * (omega - 1.0)) / (2.0 * gp.h);
            f[4 * g + 2] = (-eq - (gp.xd - gp.xd_prime) * id + efd) / gp.td0_prime;
            f[4 * g + 3] = (-efd + command) / avr.te;
        }
        f
    }

    fn eval_g(&self, net: &AdmittanceMatrix, s: &PartitionedState) -> DVector<f64> {
        let n = self.sys.n_bus();
        let v = &s.y.as_slice()[..n];
        let th = &s.y.as_slice()[n..];
        let flow = Self::network_flow(net, v, th);
        let mut inj = vec![Complex64::new(0.0, 0.0); n];
        for g in 0..self.sys.generators().len() {
            let (p, q, _) = self.stator(s, g);
            inj[self.sys.gen_bus(g)] += Complex64::new(p, q);
        }
        for l in 0..self.sys.erl_loads().len() {
            let (p, q) = self.erl_demand(s, l);
            inj[self.sys.erl_bus(l)] -= Complex64::new(p, q);
        }
        let mut g = DVector::zeros(2 * n);
        for (i, b) in self.sys.buses().iter().enumerate() {
            if b.kind == BusKind::Slack {
                g[i] = v[i] - b.v_set.unwrap_or(1.0);
                g[n + i] = th[i];
            } else {
                let mis = inj[i] - flow[i];
                g[i] = mis.re;
                g[n + i] = mis.im;
            }
        }
        g
    }

    fn eval_hc(&self, _net: &AdmittanceMatrix, s: &PartitionedState) -> DVector<f64> {
        let mut h = DVector::zeros(self.n_zc);
        for g in 0..self.sys.generators().len() {
            if let (Some(k), Some(gov)) = (self.gov_slot[g], self.sys.governor(g)) {
                let omega = s.x[4 * g + 1];
                h[k] = (-s.zc[k] + self.set.pm0[g] - gov.kg * (omega - 1.0)) / gov.tg;
            }
        }
        for (l, p) in self.sys.erl_loads().iter().enumerate() {
            let k = self.erl_slot[l];
            let v = self.v(s, self.sys.erl_bus(l)) / p.v0;
            h[k] = (-s.zc[k] + p.p0 * v.powf(p.alpha_s) - p.p0 * v.powf(p.alpha_t)) / p.tp;
            h[k + 1] = (-s.zc[k + 1] + p.q0 * v.powf(p.beta_s) - p.q0 * v.powf(p.beta_t)) / p.tq;
        }
        h
    }

    fn step_hd(&self, s: &PartitionedState, now: f64) -> DiscreteState {
        self.discrete_update(s, now, false)
    }

    fn next_discrete_instant(&self, after: f64) -> Option<f64> {
        self.sys
            .ltcs()
            .iter()
            .map(|l| {
                let k = (after / l.period_s + INSTANT_TOL).floor() + 1.0;
                k * l.period_s
            })
            .min_by(f64::total_cmp)
    }

    fn hd_fixed_point(&self, s: &PartitionedState) -> bool {
        let taps_fixed = self
            .sys
            .ltcs()
            .iter()
            .enumerate()
            .all(|(k, p)| ltc_rule(p, s.zd.taps[k], self.v(s, self.sys.ltc_controlled_bus(k))) == s.zd.taps[k]);
        let oxl_fixed = self
            .sys
            .raw()
            .oxls
            .iter()
            .enumerate()
            .all(|(k, o)| s.zd.oxl[k].active || self.efd(s, self.sys.oxl_generator(k)) <= o.efd_limit);
        taps_fixed && oxl_fixed
    }

    fn state_valid(&self, s: &PartitionedState) -> bool {
        s.y.rows(0, self.sys.n_bus()).iter().all(|&v| v > 0.0)
    }
}
