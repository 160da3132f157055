use nalgebra::DVector;

use super::{state_norm, EventMarker, SimConfig, Termination, Trajectory, TrajectoryEvent};
use crate::dae::{residual_norms, HybridModel, PartitionedState, COND_LIMIT};
use crate::netmodel::EventSpec;
use crate::solvers::{newton_solve_fd, norm_inf, NewtonConfig, NewtonResult, NewtonStatus};

/// Times closer than this are the same instant.
pub(crate) const TIME_EPS: f64 = 1e-9;

/// Why an implicit solve was rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub status: NewtonStatus,
    /// Largest Jacobian condition estimate seen.
    pub condition: f64,
    /// Newton converged but to a state outside the model's domain.
    pub invalid_state: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Complete,
    Qss,
    /// Slow states frozen; no discrete updates.
    Transient,
}

fn accept<M: HybridModel>(
    model: &M,
    mut s: PartitionedState,
    res: NewtonResult,
    fast_only: bool,
) -> Result<PartitionedState, StepFailure> {
    let fail = |invalid| StepFailure {
        status: res.status,
        condition: res.max_condition,
        invalid_state: invalid,
    };
    if !res.converged() || !(res.max_condition <= COND_LIMIT) {
        return Err(fail(false));
    }
    if fast_only {
        s.set_fast(&res.solution);
    } else {
        s.set_continuous(&res.solution);
    }
    if !model.state_valid(&s) {
        return Err(fail(true));
    }
    Ok(s)
}

/// One implicit step of length `h` from `s0` with the discrete state held.
///
/// Complete: trapezoidal on `(z_c, x)` with `g = 0`. QSS: trapezoidal on
/// `z_c` with `f = 0`, `g = 0`. Transient: trapezoidal on `x` with `g = 0`
/// and `z_c` frozen.
pub(crate) fn implicit_step<M: HybridModel>(
    model: &M,
    net: &M::Network,
    s0: &PartitionedState,
    h: f64,
    mode: Mode,
    newton: &NewtonConfig,
) -> Result<PartitionedState, StepFailure> {
    let d = model.dims();
    let f0 = model.eval_f(net, s0);
    let hc0 = model.eval_hc(net, s0);
    let mut trial = s0.clone();
    trial.t = s0.t + h;
    let fast_only = mode == Mode::Transient;
    let off = if fast_only { 0 } else { d.zc };
    let w0 = if fast_only { s0.fast() } else { s0.continuous() };

    let residual = |w: &DVector<f64>| {
        let mut p = trial.clone();
        if fast_only {
            p.set_fast(w);
        } else {
            p.set_continuous(w);
        }
        let f = model.eval_f(net, &p);
        let g = model.eval_g(net, &p);
        let mut r = DVector::zeros(w.len());
        if !fast_only {
            let hc = model.eval_hc(net, &p);
            for i in 0..d.zc {
                r[i] = p.zc[i] - s0.zc[i] - 0.5 * h * (hc[i] + hc0[i]);
            }
        }
        for i in 0..d.x {
            r[off + i] = match mode {
                Mode::Qss => f[i],
                _ => p.x[i] - s0.x[i] - 0.5 * h * (f[i] + f0[i]),
            };
        }
        for i in 0..d.y {
            r[off + d.x + i] = g[i];
        }
        r
    };
    let res = newton_solve_fd(residual, w0, newton);
    accept(model, trial, res, fast_only)
}

/// A failed step is retried as two half steps, at most this many levels deep.
const MAX_HALVINGS: u32 = 4;

fn step_with_retry<M: HybridModel>(
    model: &M,
    net: &M::Network,
    s0: &PartitionedState,
    h: f64,
    mode: Mode,
    newton: &NewtonConfig,
    depth: u32,
) -> Result<PartitionedState, StepFailure> {
    match implicit_step(model, net, s0, h, mode, newton) {
        Err(_) if depth < MAX_HALVINGS => {
            let mid = step_with_retry(model, net, s0, 0.5 * h, mode, newton, depth + 1)?;
            step_with_retry(model, net, &mid, 0.5 * h, mode, newton, depth + 1)
        }
        r => r,
    }
}

/// Re-solves `g = 0` for `y` with everything else held.
pub fn solve_algebraic<M: HybridModel>(
    model: &M,
    net: &M::Network,
    s: &PartitionedState,
    newton: &NewtonConfig,
) -> Result<PartitionedState, StepFailure> {
    let base = s.clone();
    let residual = |y: &DVector<f64>| {
        let mut p = base.clone();
        p.set_y(y);
        model.eval_g(net, &p)
    };
    let res = newton_solve_fd(residual, s.y.clone(), newton);
    let ny = s.y.len();
    let mut full = s.fast();
    full.rows_mut(s.x.len(), ny).copy_from(&res.solution);
    let res = NewtonResult { solution: full, ..res };
    accept(model, s.clone(), res, true)
}

/// Newton projection onto `{f = 0, g = 0}` with the slow states held.
pub fn project_to_manifold<M: HybridModel>(
    model: &M,
    net: &M::Network,
    s: &PartitionedState,
    newton: &NewtonConfig,
) -> Result<PartitionedState, StepFailure> {
    let base = s.clone();
    let residual = |w: &DVector<f64>| {
        let mut p = base.clone();
        p.set_fast(w);
        let f = model.eval_f(net, &p);
        let g = model.eval_g(net, &p);
        DVector::from_iterator(f.len() + g.len(), f.iter().chain(g.iter()).copied())
    };
    let res = newton_solve_fd(residual, s.fast(), newton);
    accept(model, s.clone(), res, true)
}

/// Newton on `(h_c, f, g) = 0` over all continuous states, from `guess`.
pub(crate) fn solve_long_term<M: HybridModel>(
    model: &M,
    net: &M::Network,
    guess: &PartitionedState,
    newton: &NewtonConfig,
) -> Result<PartitionedState, StepFailure> {
    let base = guess.clone();
    let residual = |w: &DVector<f64>| {
        let mut p = base.clone();
        p.set_continuous(w);
        let hc = model.eval_hc(net, &p);
        let f = model.eval_f(net, &p);
        let g = model.eval_g(net, &p);
        DVector::from_iterator(
            hc.len() + f.len() + g.len(),
            hc.iter().chain(f.iter()).chain(g.iter()).copied(),
        )
    };
    let res = newton_solve_fd(residual, guess.continuous(), newton);
    accept(model, guess.clone(), res, false)
}

pub(crate) struct RunSpec<'a, M: HybridModel> {
    pub model: &'a M,
    pub mode: Mode,
    /// Scenario events still to be applied, in time order.
    pub events: &'a [EventSpec],
    pub start: PartitionedState,
    pub topology: M::Topology,
    pub t_end: f64,
    pub cfg: &'a SimConfig,
    /// The small step is used before this time.
    pub fine_until: f64,
}

struct Loop<'a, M: HybridModel> {
    spec: &'a RunSpec<'a, M>,
    samples: Vec<PartitionedState>,
    events: Vec<TrajectoryEvent>,
    last_change: f64,
}

impl<M: HybridModel> Loop<'_, M> {
    fn resolve(&self, net: &M::Network, s: &PartitionedState) -> Result<PartitionedState, StepFailure> {
        let newton = &self.spec.cfg.newton;
        match self.spec.mode {
            Mode::Qss => project_to_manifold(self.spec.model, net, s, newton),
            _ => solve_algebraic(self.spec.model, net, s, newton),
        }
    }

    /// Replaces the newest sample with a post-event state at the same time.
    fn replace_last(&mut self, s: PartitionedState) {
        *self.samples.last_mut().expect("non-empty") = s;
    }

    fn movement_over_window(&self, now: f64) -> f64 {
        let window = self.spec.cfg.sep_window;
        let last = self.samples.last().expect("non-empty").continuous();
        self.samples
            .iter()
            .rev()
            .take_while(|s| s.t >= now - window - TIME_EPS)
            .map(|s| norm_inf(&(s.continuous() - &last)))
            .fold(0.0, f64::max)
    }

    fn detect_sep(&self, net: &M::Network, s: &PartitionedState, pending: bool) -> Option<PartitionedState> {
        let cfg = self.spec.cfg;
        if !cfg.stop_at_sep || self.spec.mode == Mode::Transient || pending {
            return None;
        }
        if s.t - self.last_change < cfg.sep_window - TIME_EPS
            || self.samples.first()?.t > s.t - cfg.sep_window + TIME_EPS
        {
            return None;
        }
        let model = self.spec.model;
        let (f, g, h) = residual_norms(model, net, s);
        if f.max(g).max(h) > cfg.sep_tol || !model.hd_fixed_point(s) {
            return None;
        }
        if self.movement_over_window(s.t) > cfg.sep_tol {
            return None;
        }
        let polished = solve_long_term(model, net, s, &cfg.newton).ok()?;
        let close = norm_inf(&(polished.continuous() - s.continuous())) <= cfg.sep_tol.sqrt();
        (close && model.hd_fixed_point(&polished)).then_some(polished)
    }
}

/// The shared event loop.
pub(crate) fn run<M: HybridModel>(spec: RunSpec<'_, M>) -> Trajectory {
    let model = spec.model;
    let cfg = spec.cfg;
    let mut topo = spec.topology.clone();
    let mut s = spec.start.clone();
    let mut net = model.network(&topo, &s.zd);
    let mut fine_until = spec.fine_until;
    let mut lp = Loop {
        spec: &spec,
        samples: vec![s.clone()],
        events: Vec::new(),
        last_change: s.t,
    };
    let mut ev = 0;
    let singular = |t: f64, status: Option<NewtonStatus>| Termination::SingularityLikely { t, status };

    let termination = 'outer: loop {
        // Scenario events due now.
        if ev < spec.events.len() && spec.events[ev].time <= s.t + TIME_EPS {
            let mut descr = Vec::new();
            let before = topo.clone();
            while ev < spec.events.len() && spec.events[ev].time <= s.t + TIME_EPS {
                match model.apply_event(&topo, &spec.events[ev].kind) {
                    Ok(t) => topo = t,
                    Err(_) => break 'outer singular(s.t, None),
                }
                descr.push(spec.events[ev].kind.to_string());
                ev += 1;
            }
            // Events that cancel out leave the state untouched.
            let changed = topo != before;
            if changed {
                net = model.network(&topo, &s.zd);
                match lp.resolve(&net, &s) {
                    Ok(r) => s = r,
                    Err(e) => break 'outer singular(s.t, Some(e.status)),
                }
                lp.replace_last(s.clone());
                lp.last_change = s.t;
                fine_until = fine_until.max(s.t + cfg.transient_window);
            }
            lp.events.push(TrajectoryEvent {
                t: s.t,
                marker: EventMarker::Scenario {
                    description: descr.join("; "),
                },
                snapshot: s.clone(),
            });
        }
        if s.t >= spec.t_end - TIME_EPS {
            break Termination::ReachedTend;
        }

        let h = if s.t < fine_until - TIME_EPS {
            cfg.h_transient
        } else {
            cfg.h_long
        };
        let mut t_next = (s.t + h).min(spec.t_end);
        let mut breaks = vec![spec.t_end];
        if ev < spec.events.len() {
            breaks.push(spec.events[ev].time);
        }
        if spec.mode != Mode::Transient {
            breaks.extend(model.next_discrete_instant(s.t));
        }
        for b in breaks {
            if b > s.t + TIME_EPS && b <= t_next + TIME_EPS {
                t_next = t_next.min(b);
            }
        }
        let mut next = match step_with_retry(model, &net, &s, t_next - s.t, spec.mode, &cfg.newton, 0) {
            Ok(n) => n,
            Err(e) => break singular(t_next, Some(e.status)),
        };
        next.t = t_next;
        if !(state_norm(&next) <= cfg.max_state_norm) {
            lp.samples.push(next);
            break Termination::Diverged { t: t_next };
        }
        lp.samples.push(next.clone());

        if spec.mode != Mode::Transient {
            let zd = model.step_hd(&next, t_next);
            if !zd.same_levels(&next.zd) {
                let before = next.zd.clone();
                next.zd = zd;
                net = model.network(&topo, &next.zd);
                let resolved = lp.resolve(&net, &next);
                if let Ok(r) = &resolved {
                    next = r.clone();
                    lp.replace_last(next.clone());
                }
                lp.events.push(TrajectoryEvent {
                    t: t_next,
                    marker: EventMarker::DiscreteChange {
                        before,
                        after: next.zd.clone(),
                    },
                    snapshot: next.clone(),
                });
                if let Err(e) = resolved {
                    break singular(t_next, Some(e.status));
                }
                lp.last_change = t_next;
                fine_until = fine_until.max(t_next + cfg.transient_window);
            } else {
                next.zd = zd;
                lp.replace_last(next.clone());
            }
        }
        s = next;

        if let Some(sep) = lp.detect_sep(&net, &s, ev < spec.events.len()) {
            break Termination::ConvergedToSep(Box::new(sep));
        }
    };

    Trajectory {
        samples: lp.samples,
        events: lp.events,
        termination,
    }
}
