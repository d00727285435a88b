//! Geometric second-order dynamical systems on task manifolds, pulled back
//! through a tree of task maps to a robot's joint space and tracked with a
//! quadratic-program inverse-dynamics controller.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ds;
pub mod error;
pub mod manifolds;
pub mod pbds;
pub mod qp;
pub mod real;
pub mod robot;
pub mod sim;

pub use ds::{christoffel_term, CustomPotential, Dissipation, DsState, Potential, SecondOrderDS};
pub use error::{Error, Result};
pub use manifolds::{Chart, ChristoffelSymbols};
pub use pbds::{PbdsTree, Regularization, TaskMap, TaskNode, TaskRole};
pub use qp::{solve_qp, Controller, ControllerConfig, QpProblem, QpSolution, QpStatus};
pub use real::{jet, HyperDual, Jet, Real};
pub use robot::{Geometry, JointLimits, JointState, MassModel, RobotModel};
pub use sim::{reference_rollout, run_closed_loop, step_plant, Integrator, RunMetrics, RunOptions, SimConfig};
