use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{BranchStatus, EventKind, NetError, SystemSpec};

/// Mutable topology state layered over an immutable [`SystemSpec`].
#[derive(Debug, Clone)]
pub struct Overlay {
    pub branch_status: Vec<BranchStatus>,
    /// Fault shunt admittance per bus, if a fault is applied.
    pub faults: Vec<Option<Complex64>>,
    pub topology_version: u64,
}

impl Overlay {
    pub fn new(sys: &SystemSpec) -> Self {
        Overlay {
            branch_status: sys.branches().iter().map(|b| b.status).collect(),
            faults: vec![None; sys.n_bus()],
            topology_version: 0,
        }
    }

    /// Equality of the electrical topology, ignoring the version counter.
    pub fn same_topology(&self, other: &Overlay) -> bool {
        self.branch_status == other.branch_status && self.faults == other.faults
    }
}

impl PartialEq for Overlay {
    fn eq(&self, other: &Self) -> bool {
        self.same_topology(other)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub y: DMatrix<Complex64>,
    pub topology_version: u64,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn add_shunt(&mut self, bus: usize, y: Complex64) {
        self.y[(bus, bus)] += y;
    }
}

/// Standard Y-bus stamping. An LTC ratio `m` on the tap side scales that
/// end as an ideal `m:1` transformer; faults are shunts at the faulted bus.
pub fn build_admittance(sys: &SystemSpec, taps: &[f64], overlay: &Overlay) -> AdmittanceMatrix {
    let n = sys.n_bus();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for ((br, rb), status) in sys
        .branches()
        .iter()
        .zip(sys.resolved_branches())
        .zip(&overlay.branch_status)
    {
        if *status == BranchStatus::Open {
            continue;
        }
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let half_b = Complex64::new(0.0, br.b_shunt / 2.0);
        let m = rb.ltc.map_or(1.0, |k| taps[k]);
        let (tap_end, other_end) = match rb.tap_at_from {
            Some(false) => (rb.to, rb.from),
            _ => (rb.from, rb.to),
        };
        y[(tap_end, tap_end)] += (ys + half_b) / (m * m);
        y[(other_end, other_end)] += ys + half_b;
        y[(tap_end, other_end)] -= ys / m;
        y[(other_end, tap_end)] -= ys / m;
    }
    for (i, f) in overlay.faults.iter().enumerate() {
        if let Some(yf) = f {
            y[(i, i)] += *yf;
        }
    }
    AdmittanceMatrix {
        y,
        topology_version: overlay.topology_version,
    }
}

pub fn apply_event(sys: &SystemSpec, overlay: &Overlay, ev: &EventKind) -> Result<Overlay, NetError> {
    let mut next = overlay.clone();
    let branch = |id: &str| {
        sys.branch_idx(id).ok_or_else(|| NetError::UnknownBranch {
            id: id.to_string(),
            context: "event".to_string(),
        })
    };
    let bus = |id: &str| {
        sys.bus_idx(id).ok_or_else(|| NetError::UnknownBus {
            id: id.to_string(),
            context: "event".to_string(),
        })
    };
    match ev {
        EventKind::ApplyFault { bus: b, g, b: bsh } => {
            next.faults[bus(b)?] = Some(Complex64::new(*g, *bsh));
        }
        EventKind::ClearFault { bus: b } => {
            let i = bus(b)?;
            if next.faults[i].take().is_none() {
                return Err(NetError::FaultNotActive(b.clone()));
            }
        }
        EventKind::OpenBranch { branch: id } => next.branch_status[branch(id)?] = BranchStatus::Open,
        EventKind::CloseBranch { branch: id } => next.branch_status[branch(id)?] = BranchStatus::Closed,
    }
    next.topology_version += 1;
    Ok(next)
}

/// Connected-component label per bus over closed branches.
pub(crate) fn components(sys: &SystemSpec, overlay: &Overlay) -> Vec<usize> {
    let n = sys.n_bus();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (rb, status) in sys.resolved_branches().iter().zip(&overlay.branch_status) {
        if *status == BranchStatus::Closed {
            let (a, b) = (find(&mut parent, rb.from), find(&mut parent, rb.to));
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = vec![0; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        out[i] = label[r];
    }
    out
}

/// Ids of buses with no closed path to a slack bus.
pub fn islanded_buses(sys: &SystemSpec, overlay: &Overlay) -> Vec<String> {
    let comp = components(sys, overlay);
    let energized: Vec<usize> = sys.slack_buses().iter().map(|&s| comp[s]).collect();
    sys.buses()
        .iter()
        .enumerate()
        .filter(|(i, _)| !energized.contains(&comp[*i]))
        .map(|(_, b)| b.id.clone())
        .collect()
}
