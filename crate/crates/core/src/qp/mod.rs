//! Inverse-dynamics quadratic program and a dense active-set solver.

mod controller;
mod solver;

pub use controller::{
    acceleration_bounds, build_qp, torque_row_count, Controller, ControllerConfig, TickDiagnostics,
};
pub use solver::{
    solve_eqp, solve_qp, ActiveSetSolver, KktReport, Partition, QpProblem, QpSolution, QpStatus, SolverSettings,
};
