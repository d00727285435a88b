use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::solver::{ActiveSetSolver, KktReport, Partition, QpProblem, QpSolution, QpStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::robot::{JointState, RobotModel};

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerConfig {
    /// Tracking weight `Q` (n × n, SPD).
    pub q_weight: DMatrix<f64>,
    /// Effort weight `R` (n_τ × n_τ, SPD).
    pub r_weight: DMatrix<f64>,
    /// Horizon turning velocity and position limits into acceleration bounds (s).
    pub dt_limits: f64,
    pub solver: SolverSettings,
}

impl ControllerConfig {
    /// `Q = 10·I`, `R = 1e-3·I`.
    pub fn default_for(n: usize, n_tau: usize, dt: f64) -> Self {
        Self::diagonal(n, n_tau, 10.0, 1e-3, dt)
    }

    pub fn diagonal(n: usize, n_tau: usize, q: f64, r: f64, dt: f64) -> Self {
        Self {
            q_weight: DMatrix::identity(n, n) * q,
            r_weight: DMatrix::identity(n_tau, n_tau) * r,
            dt_limits: dt,
            solver: SolverSettings::default(),
        }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        let (n, nt) = (model.dof(), model.n_actuators());
        check_spd(&self.q_weight, n, "tracking weight")?;
        check_spd(&self.r_weight, nt, "effort weight")?;
        if !(self.dt_limits > 0.0 && self.dt_limits.is_finite()) {
            return Err(Error::InvalidParameter("limit horizon must be positive".into()));
        }
        if self.solver.max_iter == 0 {
            return Err(Error::InvalidParameter("solver needs at least one iteration".into()));
        }
        Ok(())
    }
}

fn check_spd(m: &DMatrix<f64>, n: usize, what: &'static str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dim(what, n, m.nrows()));
    }
    if (m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
        return Err(Error::InvalidParameter(alloc::format!("{what} must be symmetric")));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::InvalidParameter(alloc::format!("{what} must be positive definite")));
    }
    Ok(())
}

/// Per-joint acceleration bounds from acceleration, velocity and position
/// limits over the horizon `dt`, clamped into `[−a_max, a_max]`.
pub fn acceleration_bounds(model: &RobotModel, state: &JointState, dt: f64) -> (DVector<f64>, DVector<f64>) {
    let lim = &model.limits;
    let n = model.dof();
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for i in 0..n {
        let (q, qd, a) = (state.q[i], state.qd[i], lim.a_max[i]);
        let v_up = lim.v_max[i].min(libm::sqrt(2.0 * a * (lim.q_max[i] - q).max(0.0)));
        let v_dn = lim.v_max[i].min(libm::sqrt(2.0 * a * (q - lim.q_min[i]).max(0.0)));
        let up = a.min((v_up - qd) / dt).max(-a);
        let dn = (-a).max((-v_dn - qd) / dt).min(a);
        lo[i] = dn.min(up);
        hi[i] = up;
    }
    (lo, hi)
}

fn joint_rows_enabled(model: &RobotModel, i: usize) -> bool {
    model.limits.a_max[i].is_finite() || model.limits.v_max[i].is_finite()
}

/// Assembles the inverse-dynamics QP over `z = [q̈, τ, ξ]`.
///
/// Rows of `C_I`: for each actuator with finite `τ_max`, `τ + τ_max ≥ 0`
/// then `τ_max − τ ≥ 0`; afterwards for each joint with finite limits,
/// `q̈ − lo ≥ 0` then `hi − q̈ ≥ 0`.
#[allow(clippy::too_many_arguments)]
pub fn build_qp(
    model: &RobotModel,
    state: &JointState,
    qdd_d: &DVector<f64>,
    xdd_d: &DVector<f64>,
    jacobian: &DMatrix<f64>,
    jdot_qd: &DVector<f64>,
    cfg: &ControllerConfig,
) -> Result<QpProblem> {
    let (n, nt) = (model.dof(), model.n_actuators());
    let s = xdd_d.len();
    if state.q.len() != n || state.qd.len() != n {
        return Err(Error::dim("joint state", n, state.q.len()));
    }
    if qdd_d.len() != n {
        return Err(Error::dim("desired joint acceleration", n, qdd_d.len()));
    }
    if jacobian.nrows() != s || jacobian.ncols() != n {
        return Err(Error::dim("task jacobian", s * n, jacobian.nrows() * jacobian.ncols()));
    }
    if jdot_qd.len() != s {
        return Err(Error::dim("task drift", s, jdot_qd.len()));
    }
    if cfg.q_weight.nrows() != n || cfg.r_weight.nrows() != nt {
        return Err(Error::dim("controller weights", n + nt, cfg.q_weight.nrows() + cfg.r_weight.nrows()));
    }
    let d = n + nt + s;
    let (m, h) = model.dynamics_terms(&state.q, &state.qd)?;

    let mut w_cost = DMatrix::zeros(d, d);
    w_cost.view_mut((0, 0), (n, n)).copy_from(&cfg.q_weight);
    w_cost.view_mut((n, n), (nt, nt)).copy_from(&cfg.r_weight);
    w_cost.view_mut((n + nt, n + nt), (s, s)).fill_with_identity();
    let mut w_lin = DVector::zeros(d);
    w_lin.rows_mut(0, n).copy_from(&(-(&cfg.q_weight * qdd_d)));

    let mut c_e = DMatrix::zeros(n + s, d);
    c_e.view_mut((0, 0), (n, n)).copy_from(&m);
    c_e.view_mut((0, n), (n, nt)).copy_from(&(-&model.selection));
    c_e.view_mut((n, 0), (s, n)).copy_from(jacobian);
    c_e.view_mut((n, n + nt), (s, s)).fill_with_identity();
    let mut c_e_off = DVector::zeros(n + s);
    c_e_off.rows_mut(0, n).copy_from(&h);
    c_e_off.rows_mut(n, s).copy_from(&(jdot_qd - xdd_d));

    let (lo, hi) = acceleration_bounds(model, state, cfg.dt_limits);
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for j in 0..nt {
        let t = model.limits.tau_max[j];
        if t.is_finite() {
            rows.push((n + j, 1.0, t));
            rows.push((n + j, -1.0, t));
        }
    }
    for i in 0..n {
        if joint_rows_enabled(model, i) {
            rows.push((i, 1.0, -lo[i]));
            rows.push((i, -1.0, hi[i]));
        }
    }
    let mut c_i = DMatrix::zeros(rows.len(), d);
    let mut c_i_off = DVector::zeros(rows.len());
    for (r, &(col, sign, off)) in rows.iter().enumerate() {
        c_i[(r, col)] = sign;
        c_i_off[r] = off;
    }
    Ok(QpProblem {
        w_cost,
        w_lin,
        c_e,
        c_e_off,
        c_i,
        c_i_off,
        partition: Some(Partition { n, n_tau: nt, s }),
    })
}

/// Number of leading inequality rows that bound torques.
pub fn torque_row_count(model: &RobotModel) -> usize {
    2 * model.limits.tau_max.iter().filter(|t| t.is_finite()).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickDiagnostics {
    pub status: QpStatus,
    pub kkt: KktReport,
    pub active_set: Vec<usize>,
    pub slack_norm: f64,
    /// Some torque bound is in the active set.
    pub torque_limited: bool,
    /// The previous torque was re-used because the QP had no solution.
    pub held: bool,
    pub iterations: usize,
    /// Joint acceleration chosen by the QP.
    pub qdd: DVector<f64>,
}

/// One QP controller instance with its warm-start cache.
#[derive(Clone, Debug)]
pub struct Controller {
    pub config: ControllerConfig,
    solver: ActiveSetSolver,
    last_tau: DVector<f64>,
}

impl Controller {
    pub fn new(model: &RobotModel, config: ControllerConfig) -> Result<Self> {
        config.validate(model)?;
        Ok(Self {
            solver: ActiveSetSolver::new(config.solver),
            config,
            last_tau: DVector::zeros(model.n_actuators()),
        })
    }

    pub fn last_torque(&self) -> &DVector<f64> {
        &self.last_tau
    }

    /// Sets the torque held when a tick has no feasible solution.
    pub fn hold(&mut self, tau: DVector<f64>) {
        self.last_tau = tau;
    }

    #[allow(clippy::too_many_arguments)]
    pub fn control_tick(
        &mut self,
        model: &RobotModel,
        state: &JointState,
        qdd_d: &DVector<f64>,
        xdd_d: &DVector<f64>,
        jacobian: &DMatrix<f64>,
        jdot_qd: &DVector<f64>,
    ) -> Result<(DVector<f64>, TickDiagnostics)> {
        let p = build_qp(model, state, qdd_d, xdd_d, jacobian, jdot_qd, &self.config)?;
        let sol = self.solver.solve(&p)?;
        Ok(self.finish(model, &sol))
    }

    fn finish(&mut self, model: &RobotModel, sol: &QpSolution) -> (DVector<f64>, TickDiagnostics) {
        let held = sol.status == QpStatus::Infeasible;
        let tau = if held {
            self.last_tau.clone()
        } else {
            let mut t = sol.tau().unwrap_or_else(|| self.last_tau.clone());
            for (j, x) in t.iter_mut().enumerate() {
                let lim = model.limits.tau_max[j];
                *x = x.clamp(-lim, lim);
            }
            t
        };
        self.last_tau = tau.clone();
        let n_tau_rows = torque_row_count(model);
        let diag = TickDiagnostics {
            status: sol.status,
            kkt: sol.kkt,
            torque_limited: sol.active_set.iter().any(|&i| i < n_tau_rows),
            active_set: sol.active_set.clone(),
            slack_norm: sol.slack().map_or(0.0, |s| s.norm()),
            held,
            iterations: sol.iterations,
            qdd: sol.qdd().unwrap_or_else(|| DVector::zeros(model.dof())),
        };
        (tau, diag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::solver::solve_qp;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn pendulum() -> RobotModel {
        let mut m = RobotModel::preset("planar1").unwrap();
        m.gravity = [9.81, 0.0, 0.0];
        m
    }

    #[test]
    fn block_layout() {
        let model = RobotModel::preset("planar3").unwrap();
        let st = JointState::from_slices(&[0.1, 0.2, 0.3], &[0.0; 3]);
        let j = DMatrix::zeros(3, 3);
        let cfg = ControllerConfig::default_for(3, 3, 1e-3);
        let p = build_qp(&model, &st, &DVector::zeros(3), &DVector::zeros(3), &j, &DVector::zeros(3), &cfg).unwrap();
        assert_eq!(p.dim(), 9);
        assert_eq!((p.c_e.nrows(), p.c_e.ncols()), (6, 9));
        assert_eq!(p.w_cost.view((0, 0), (3, 3)), DMatrix::identity(3, 3) * 10.0);
        assert_eq!(p.w_cost.view((3, 3), (3, 3)), DMatrix::identity(3, 3) * 1e-3);
        assert_eq!(p.w_cost.view((6, 6), (3, 3)), DMatrix::identity(3, 3));
        assert_eq!(p.w_cost.view((0, 3), (3, 6)), DMatrix::zeros(3, 6));
    }

    #[test]
    fn origin_is_optimal_at_rest_without_gravity() {
        let mut model = RobotModel::preset("planar2").unwrap();
        model.gravity = [0.0; 3];
        let st = JointState::from_slices(&[0.3, -0.4], &[0.0, 0.0]);
        let j = model.ee_jacobian(&st.q).unwrap().rows(0, 2).into_owned();
        let cfg = ControllerConfig::default_for(2, 2, 1e-3);
        let p = build_qp(&model, &st, &DVector::zeros(2), &DVector::zeros(2), &j, &DVector::zeros(2), &cfg).unwrap();
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!(s.z.norm() < 1e-14);
        assert!(s.kkt.equality < 1e-15 && s.kkt.stationarity < 1e-15);
    }

    #[test]
    fn one_link_gravity_compensation_tradeoff() {
        // Unknowns (q̈, τ, ξ); with J = 1, ẍ_d = 0 and J̇q̇ = 0 the problem is
        // min 5 q̈² + r/2 τ² + ½ ξ²  s.t. q̈ − τ + g = 0, q̈ + ξ = 0.
        // Eliminating τ = q̈ + g, ξ = −q̈: (10 + r + 1) q̈ + r g = 0.
        let model = pendulum();
        let st = JointState::from_slices(&[core::f64::consts::FRAC_PI_2], &[0.0]);
        let j = DMatrix::from_element(1, 1, 1.0);
        for r in [1e-3, 1e-6, 1.0] {
            let mut cfg = ControllerConfig::diagonal(1, 1, 10.0, r, 1e-3);
            cfg.solver = SolverSettings::default();
            let mut unconstrained = model.clone();
            unconstrained.limits = crate::robot::JointLimits::uniform(1, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY);
            let p = build_qp(&unconstrained, &st, &v(&[0.0]), &v(&[0.0]), &j, &v(&[0.0]), &cfg).unwrap();
            let s = solve_qp(&p).unwrap();
            let g = 9.81;
            let qdd = -r * g / (11.0 + r);
            assert!((s.z[0] - qdd).abs() < 1e-12);
            assert!((s.z[1] - (qdd + g)).abs() < 1e-12);
        }
    }

    #[test]
    fn torque_clamps_at_bound_below_gravity() {
        let mut model = pendulum();
        model.limits.tau_max = alloc::vec![5.0];
        let st = JointState::from_slices(&[core::f64::consts::FRAC_PI_2], &[0.0]);
        let j = DMatrix::from_element(1, 1, 1.0);
        let mut ctl = Controller::new(&model, ControllerConfig::default_for(1, 1, 1e-3)).unwrap();
        let (tau, d) = ctl.control_tick(&model, &st, &v(&[0.0]), &v(&[0.0]), &j, &v(&[0.0])).unwrap();
        assert_eq!(d.status, QpStatus::Solved);
        assert_eq!(tau[0], 5.0);
        assert!(d.torque_limited);
        assert!(d.active_set.contains(&1));
    }

    #[test]
    fn slack_absorbs_inconsistent_task_target() {
        let mut model = RobotModel::preset("planar2").unwrap();
        model.gravity = [0.0; 3];
        let st = JointState::from_slices(&[0.3, 0.9], &[0.2, -0.1]);
        let jet = model.ee_jet(&st.q, &st.qd).unwrap();
        let j = jet.jacobian.rows(0, 2).into_owned();
        let jdq = jet.jdot_qd(&st.qd).rows(0, 2).into_owned();
        let qdd_d = v(&[0.5, -0.5]);
        let xdd_d = &j * &qdd_d + &jdq + v(&[1.0, 0.0]);
        let cfg = ControllerConfig::default_for(2, 2, 1e-3);
        let p = build_qp(&model, &st, &qdd_d, &xdd_d, &j, &jdq, &cfg).unwrap();
        let s = solve_qp(&p).unwrap();
        let slack = s.slack().unwrap();
        assert!(slack.norm() > 1e-3);
        let row2 = &j * s.qdd().unwrap() + &jdq + &slack - &xdd_d;
        assert!(row2.amax() < 1e-10);
    }

    #[test]
    fn acceleration_bounds_respect_velocity_and_position() {
        let model = RobotModel::preset("planar1").unwrap();
        let dt = 0.01;
        // At the velocity limit, no further acceleration upwards.
        let st = JointState::from_slices(&[0.0], &[3.0]);
        let (lo, hi) = acceleration_bounds(&model, &st, dt);
        assert!(hi[0].abs() < 1e-12);
        assert_eq!(lo[0], -50.0);
        // At the upper position limit and moving up: must brake fully.
        let st = JointState::from_slices(&[core::f64::consts::PI], &[1.0]);
        let (lo, hi) = acceleration_bounds(&model, &st, dt);
        assert_eq!(hi[0], -50.0);
        assert!(lo[0] <= hi[0]);
    }

    #[test]
    fn infeasible_tick_holds_the_previous_torque() {
        let mut model = pendulum();
        model.limits.tau_max = alloc::vec![5.0];
        let st = JointState::from_slices(&[core::f64::consts::FRAC_PI_2], &[0.0]);
        let j = DMatrix::from_element(1, 1, 1.0);
        let mut ctl = Controller::new(&model, ControllerConfig::default_for(1, 1, 1e-3)).unwrap();
        let (tau0, _) = ctl.control_tick(&model, &st, &v(&[0.0]), &v(&[0.0]), &j, &v(&[0.0])).unwrap();
        // Gravity 9.81 needs |q̈| ≥ 4.81 with τ ≤ 5; an acceleration box of 1 makes it infeasible.
        model.limits.a_max = alloc::vec![1.0];
        let (tau1, d) = ctl.control_tick(&model, &st, &v(&[0.0]), &v(&[0.0]), &j, &v(&[0.0])).unwrap();
        assert_eq!(d.status, QpStatus::Infeasible);
        assert!(d.held);
        assert_eq!(tau0, tau1);
    }
}
