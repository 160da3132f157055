//! Dense linear algebra, Newton iteration, and equilibrium initialization.

mod init;
mod linear;
pub mod newton;

pub use init::{initialize_equilibrium, power_flow, InitError, PowerFlow, INIT_RESIDUAL_TOL};
pub use linear::{matrix_norm_inf, norm_inf, solve_linear, LinearError, Lu};
pub use newton::{fd_jacobian, newton_solve, newton_solve_fd, Damping, NewtonConfig, NewtonResult, NewtonStatus};
