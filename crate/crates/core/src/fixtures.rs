//! Small analytic models with known behavior, used to check the
//! integrators and the spectrum tests.

use nalgebra::{DMatrix, DVector};

use crate::dae::{DaeError, Dims, DiscreteState, HybridModel, PartitionedState, VariableNames};
use crate::netmodel::EventKind;

/// Linear model
/// `ż = H_z z + H_x x + H_y y`, `ẋ = F_z z + F_x x + F_y y`,
/// `0 = G_z z + G_x x + G_y y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFixture {
    pub h: [DMatrix<f64>; 3],
    pub f: [DMatrix<f64>; 3],
    pub g: [DMatrix<f64>; 3],
}

impl LinearFixture {
    pub fn new(h: [DMatrix<f64>; 3], f: [DMatrix<f64>; 3], g: [DMatrix<f64>; 3]) -> Self {
        let (nz, nx, ny) = (h[0].ncols(), f[1].ncols(), g[2].ncols());
        for (blk, rows) in [(&h, nz), (&f, nx), (&g, ny)] {
            for (m, cols) in blk.iter().zip([nz, nx, ny]) {
                assert_eq!((m.nrows(), m.ncols()), (rows, cols), "inconsistent fixture block");
            }
        }
        LinearFixture { h, f, g }
    }

    /// One variable per partition:
    /// `ż = −z + x`, `ẋ = (−x + y)/ε`, `0 = y − z/2`.
    /// On the manifold `x = y = z/2`, so the reduced model is `ż = −z/2`.
    pub fn two_timescale(eps: f64) -> Self {
        Self::scalar([-1.0, 1.0, 0.0], [0.0, -1.0 / eps, 1.0 / eps], [-0.5, 0.0, 1.0])
    }

    /// Scalar blocks `[·_z, ·_x, ·_y]` for each of `h`, `f`, `g`.
    pub fn scalar(h: [f64; 3], f: [f64; 3], g: [f64; 3]) -> Self {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        LinearFixture::new(h.map(m), f.map(m), g.map(m))
    }

    /// Undamped oscillator `ẍ + x = 0` with no slow or algebraic states.
    pub fn oscillator() -> Self {
        LinearFixture::new(
            [DMatrix::zeros(0, 0), DMatrix::zeros(0, 2), DMatrix::zeros(0, 0)],
            [
                DMatrix::zeros(2, 0),
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
                DMatrix::zeros(2, 0),
            ],
            [DMatrix::zeros(0, 0), DMatrix::zeros(0, 2), DMatrix::zeros(0, 0)],
        )
    }

    pub fn state(&self, z: &[f64], x: &[f64], y: &[f64]) -> PartitionedState {
        PartitionedState {
            t: 0.0,
            zc: DVector::from_row_slice(z),
            zd: DiscreteState::default(),
            x: DVector::from_row_slice(x),
            y: DVector::from_row_slice(y),
        }
    }

    fn apply(blk: &[DMatrix<f64>; 3], s: &PartitionedState) -> DVector<f64> {
        &blk[0] * &s.zc + &blk[1] * &s.x + &blk[2] * &s.y
    }
}

impl HybridModel for LinearFixture {
    type Topology = ();
    type Network = ();

    fn dims(&self) -> Dims {
        Dims {
            zc: self.h[0].ncols(),
            x: self.f[1].ncols(),
            y: self.g[2].ncols(),
        }
    }

    fn names(&self) -> VariableNames {
        let d = self.dims();
        let seq = |p: &str, n: usize| (0..n).map(|i| format!("{p}.lin.v{i}")).collect();
        VariableNames {
            zc: seq("zc", d.zc),
            zd: Vec::new(),
            x: seq("x", d.x),
            y: seq("y", d.y),
        }
    }

    fn base_topology(&self) {}

    fn apply_event(&self, _: &(), _: &EventKind) -> Result<(), DaeError> {
        Err(DaeError::EventsUnsupported)
    }

    fn network(&self, _: &(), _: &DiscreteState) {}

    fn eval_f(&self, _: &(), s: &PartitionedState) -> DVector<f64> {
        Self::apply(&self.f, s)
    }

    fn eval_g(&self, _: &(), s: &PartitionedState) -> DVector<f64> {
        Self::apply(&self.g, s)
    }

    fn eval_hc(&self, _: &(), s: &PartitionedState) -> DVector<f64> {
        Self::apply(&self.h, s)
    }
}

/// Saddle-node on the constraint: `ż = −rate`, `ẋ = −x + y`, `0 = y² − z`.
/// The algebraic Jacobian `2y` vanishes as `z` reaches zero, after which no
/// real solution exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldFixture {
    pub rate: f64,
}

impl FoldFixture {
    /// Consistent start on the upper branch `y = √z`.
    pub fn start(&self, z: f64) -> PartitionedState {
        PartitionedState {
            t: 0.0,
            zc: DVector::from_element(1, z),
            zd: DiscreteState::default(),
            x: DVector::from_element(1, z.sqrt()),
            y: DVector::from_element(1, z.sqrt()),
        }
    }
}

impl HybridModel for FoldFixture {
    type Topology = ();
    type Network = ();

    fn dims(&self) -> Dims {
        Dims { zc: 1, x: 1, y: 1 }
    }

    fn names(&self) -> VariableNames {
        VariableNames {
            zc: vec!["zc.fold.z".into()],
            zd: Vec::new(),
            x: vec!["x.fold.x".into()],
            y: vec!["y.fold.y".into()],
        }
    }

    fn base_topology(&self) {}

    fn apply_event(&self, _: &(), _: &EventKind) -> Result<(), DaeError> {
        Err(DaeError::EventsUnsupported)
    }

    fn network(&self, _: &(), _: &DiscreteState) {}

    fn eval_f(&self, _: &(), s: &PartitionedState) -> DVector<f64> {
        DVector::from_element(1, -s.x[0] + s.y[0])
    }

    fn eval_g(&self, _: &(), s: &PartitionedState) -> DVector<f64> {
        DVector::from_element(1, s.y[0] * s.y[0] - s.zc[0])
    }

    fn eval_hc(&self, _: &(), _: &PartitionedState) -> DVector<f64> {
        DVector::from_element(1, -self.rate)
    }
}
