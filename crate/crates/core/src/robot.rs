//! Analytic serial-arm models: mass matrix, lumped bias forces, forward
//! kinematics and end-effector Jacobians.
//!
//! Each link contributes a translational term through its centre-of-mass
//! Jacobian and a rotational term through its angular-velocity Jacobian:
//!
//! ```text
//! M = Σ m J_vᵀ J_v + J_ωᵀ I J_ω + diag(armature)
//! h = Σ m J_vᵀ (J̇_v q̇ − g) + J_ωᵀ (I J̇_ω q̇ + ω × I ω)
//! ```
//!
//! All Jacobians and their time derivatives come from one hyper-dual pass over
//! the generic kinematic chain, so they are exact to rounding.

use alloc::vec;
use alloc::vec::Vec;
use core::convert::Infallible;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::real::{jet, Jet, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    /// Revolute joints about parallel z axes; the arm moves in the xy plane.
    Planar,
    /// Base yaw about z, then shoulder and elbow pitch (anthropomorphic 3-DoF).
    Spatial3R,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MassModel {
    /// Mass concentrated at the distal end of each link.
    PointMass,
    /// Thin uniform rod: centre of mass at mid-link, inertia about it from `rod_inertias`.
    UniformRod,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointLimits {
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub v_max: Vec<f64>,
    pub a_max: Vec<f64>,
    /// One entry per actuator (column of the selection matrix).
    pub tau_max: Vec<f64>,
}

impl JointLimits {
    pub fn uniform(n: usize, q: f64, v: f64, a: f64, tau: f64) -> Self {
        Self {
            q_min: vec![-q; n],
            q_max: vec![q; n],
            v_max: vec![v; n],
            a_max: vec![a; n],
            tau_max: vec![tau; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub geometry: Geometry,
    pub link_lengths: Vec<f64>,
    pub masses: Vec<f64>,
    pub mass_model: MassModel,
    /// Inertia of each rod about its centre, perpendicular to its axis (kg·m²).
    pub rod_inertias: Vec<f64>,
    /// Rotor inertia reflected on each joint (kg·m²).
    pub armature: Vec<f64>,
    pub gravity: [f64; 3],
    /// `n × n_τ` map from actuator torques to generalised forces.
    pub selection: DMatrix<f64>,
    pub limits: JointLimits,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Self {
        Self { q, qd }
    }

    pub fn from_slices(q: &[f64], qd: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(q), DVector::from_column_slice(qd))
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}

/// Per-link kinematic quantities at one state.
struct LinkKinematics {
    /// Centre-of-mass points followed by the end effector, each with Jacobian data.
    points: Jet,
    /// Joint axes (world frame) with Jacobian data; `axes.value[3i..3i+3]` is axis i.
    axes: Jet,
}

fn rod_direction<T: Real>(yaw: T, pitch: T) -> [T; 3] {
    let c = pitch.cos();
    [yaw.cos() * c, yaw.sin() * c, -pitch.sin()]
}

impl RobotModel {
    fn with_defaults(geometry: Geometry, link_lengths: Vec<f64>, masses: Vec<f64>) -> Self {
        let n = link_lengths.len();
        let rod_inertias = link_lengths
            .iter()
            .zip(&masses)
            .map(|(l, m)| m * l * l / 12.0)
            .collect();
        Self {
            geometry,
            link_lengths,
            masses,
            mass_model: MassModel::PointMass,
            rod_inertias,
            armature: vec![0.0; n],
            gravity: [0.0, -9.81, 0.0],
            selection: DMatrix::identity(n, n),
            limits: JointLimits::uniform(n, core::f64::consts::PI, 3.0, 50.0, 100.0),
        }
    }

    /// Planar chain of point masses.
    pub fn planar(link_lengths: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        let m = Self::with_defaults(Geometry::Planar, link_lengths, masses);
        m.validate()?;
        Ok(m)
    }

    /// Yaw-pitch-pitch arm: link 1 vertical along +z, links 2 and 3 in the
    /// vertical plane selected by the yaw joint.
    pub fn spatial_3r(link_lengths: [f64; 3], masses: [f64; 3]) -> Result<Self> {
        let mut m = Self::with_defaults(Geometry::Spatial3R, link_lengths.to_vec(), masses.to_vec());
        m.gravity = [0.0, 0.0, -9.81];
        m.armature = vec![0.02; 3];
        m.validate()?;
        Ok(m)
    }

    /// Named presets: `planar1`, `planar2`, `planar3`, `spatial3r`.
    pub fn preset(name: &str) -> Option<Self> {
        let model = match name {
            "planar1" => Self::planar(vec![1.0], vec![1.0]),
            "planar2" => Self::planar(vec![1.0, 1.0], vec![1.0, 1.0]),
            "planar3" => Self::planar(vec![0.4, 0.35, 0.25], vec![1.2, 0.9, 0.5]).map(|mut m| {
                m.mass_model = MassModel::UniformRod;
                m
            }),
            "spatial3r" => Self::spatial_3r([0.4, 0.4, 0.4], [2.0, 1.5, 1.0]).map(|mut m| {
                m.mass_model = MassModel::UniformRod;
                m.limits.q_min = vec![-3.0, -2.0, -2.8];
                m.limits.q_max = vec![3.0, 2.0, 2.8];
                m
            }),
            _ => return None,
        };
        model.ok()
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn n_actuators(&self) -> usize {
        self.selection.ncols()
    }

    /// Dimension of the end-effector position: 2 for planar arms, 3 otherwise.
    pub fn task_dim(&self) -> usize {
        match self.geometry {
            Geometry::Planar => 2,
            Geometry::Spatial3R => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        let bad = |s: &str| Err(Error::InvalidParameter(s.into()));
        if n == 0 {
            return bad("robot needs at least one joint");
        }
        if self.geometry == Geometry::Spatial3R && n != 3 {
            return Err(Error::dim("spatial3r joint count", 3, n));
        }
        for (what, len) in [
            ("masses", self.masses.len()),
            ("rod_inertias", self.rod_inertias.len()),
            ("armature", self.armature.len()),
            ("q_min", self.limits.q_min.len()),
            ("q_max", self.limits.q_max.len()),
            ("v_max", self.limits.v_max.len()),
            ("a_max", self.limits.a_max.len()),
        ] {
            if len != n {
                return Err(Error::dim(what, n, len));
            }
        }
        if self.selection.nrows() != n {
            return Err(Error::dim("selection matrix rows", n, self.selection.nrows()));
        }
        if self.limits.tau_max.len() != self.n_actuators() {
            return Err(Error::dim("tau_max", self.n_actuators(), self.limits.tau_max.len()));
        }
        if !self.link_lengths.iter().chain(&self.masses).all(|&v| v > 0.0) {
            return bad("link lengths and masses must be strictly positive");
        }
        if !self.rod_inertias.iter().chain(&self.armature).all(|&v| v >= 0.0) {
            return bad("inertias must be non-negative");
        }
        let l = &self.limits;
        if !l.v_max.iter().chain(&l.a_max).chain(&l.tau_max).all(|&v| v > 0.0) {
            return bad("velocity, acceleration and torque limits must be strictly positive");
        }
        if !l.q_min.iter().zip(&l.q_max).all(|(lo, hi)| lo < hi) {
            return bad("q_min must be below q_max");
        }
        if self.n_actuators() == 0
            || self.selection.clone().svd(false, false).rank(1e-9) < self.n_actuators()
        {
            return bad("selection matrix must have full column rank");
        }
        Ok(())
    }

    fn com_fraction(&self) -> f64 {
        match self.mass_model {
            MassModel::PointMass => 1.0,
            MassModel::UniformRod => 0.5,
        }
    }

    /// Link directions (unit vectors along each link) for a generic scalar.
    fn link_directions<T: Real>(&self, q: &[T]) -> Vec<[T; 3]> {
        match self.geometry {
            Geometry::Planar => {
                let mut angle = T::zero();
                q.iter()
                    .map(|&qi| {
                        angle += qi;
                        [angle.cos(), angle.sin(), T::zero()]
                    })
                    .collect()
            }
            Geometry::Spatial3R => vec![
                [T::zero(), T::zero(), T::one()],
                rod_direction(q[0], q[1]),
                rod_direction(q[0], q[1] + q[2]),
            ],
        }
    }

    /// Centre-of-mass points of every link, then the end effector, flattened xyz.
    pub fn points_generic<T: Real>(&self, q: &[T]) -> Vec<T> {
        let frac = T::cst(self.com_fraction());
        let dirs = self.link_directions(q);
        let mut base = [T::zero(); 3];
        let mut out = Vec::with_capacity(3 * (self.dof() + 1));
        for (u, &l) in dirs.iter().zip(&self.link_lengths) {
            let l = T::cst(l);
            for k in 0..3 {
                out.push(base[k] + frac * l * u[k]);
            }
            for k in 0..3 {
                base[k] += l * u[k];
            }
        }
        out.extend_from_slice(&base);
        out
    }

    /// World-frame joint axes, flattened xyz.
    fn axes_generic<T: Real>(&self, q: &[T]) -> Vec<T> {
        match self.geometry {
            Geometry::Planar => {
                let mut out = Vec::with_capacity(3 * q.len());
                for _ in q {
                    out.extend_from_slice(&[T::zero(), T::zero(), T::one()]);
                }
                out
            }
            Geometry::Spatial3R => {
                let pitch_axis = [-q[0].sin(), q[0].cos(), T::zero()];
                let mut out = vec![T::zero(), T::zero(), T::one()];
                out.extend_from_slice(&pitch_axis);
                out.extend_from_slice(&pitch_axis);
                out
            }
        }
    }

    fn check_state(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::dim("joint positions", self.dof(), q.len()));
        }
        if qd.len() != self.dof() {
            return Err(Error::dim("joint velocities", self.dof(), qd.len()));
        }
        Ok(())
    }

    fn kinematics(&self, q: &DVector<f64>, qd: &DVector<f64>) -> LinkKinematics {
        let points = jet(q.as_slice(), qd.as_slice(), |h| {
            Ok::<_, Infallible>(self.points_generic(h))
        })
        .unwrap_or_else(|e| match e {});
        let axes = jet(q.as_slice(), qd.as_slice(), |h| {
            Ok::<_, Infallible>(self.axes_generic(h))
        })
        .unwrap_or_else(|e| match e {});
        LinkKinematics { points, axes }
    }

    /// World inertia of link k about its centre of mass.
    fn link_inertia(&self, k: usize, q: &DVector<f64>) -> Matrix3<f64> {
        if self.mass_model == MassModel::PointMass {
            return Matrix3::zeros();
        }
        let d = self.link_directions(q.as_slice())[k];
        let u = Vector3::new(d[0], d[1], d[2]);
        (Matrix3::identity() - u * u.transpose()) * self.rod_inertias[k]
    }

    /// Angular-velocity Jacobian of link k and its time derivative (3 × n).
    fn angular_jacobians(&self, k: usize, axes: &Jet, qd: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dof();
        let mut jw = DMatrix::zeros(3, n);
        let mut jwd = DMatrix::zeros(3, n);
        let axis_rates = &axes.jacobian * qd;
        for i in 0..=k {
            for r in 0..3 {
                jw[(r, i)] = axes.value[3 * i + r];
                jwd[(r, i)] = axis_rates[3 * i + r];
            }
        }
        (jw, jwd)
    }

    /// Mass matrix and bias forces computed together.
    pub fn dynamics_terms(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.check_state(q, qd)?;
        let n = self.dof();
        let kin = self.kinematics(q, qd);
        let g = Vector3::from_column_slice(&self.gravity);
        let mut mass = DMatrix::from_diagonal(&DVector::from_column_slice(&self.armature));
        let mut bias = DVector::zeros(n);
        let pjd = &kin.points.jacobian_dot * qd;
        for k in 0..n {
            let jv = kin.points.jacobian.rows(3 * k, 3);
            let m = self.masses[k];
            mass += jv.transpose() * jv * m;
            let acc = Vector3::new(pjd[3 * k], pjd[3 * k + 1], pjd[3 * k + 2]) - g;
            bias += jv.transpose() * acc * m;
            if self.mass_model == MassModel::UniformRod {
                let inertia = self.link_inertia(k, q);
                let inertia = DMatrix::from_column_slice(3, 3, inertia.as_slice());
                let (jw, jwd) = self.angular_jacobians(k, &kin.axes, qd);
                mass += jw.transpose() * &inertia * &jw;
                let w = &jw * qd;
                let w = Vector3::new(w[0], w[1], w[2]);
                let iw = &inertia * DVector::from_column_slice(w.as_slice());
                let gyro = w.cross(&Vector3::new(iw[0], iw[1], iw[2]));
                let torque = &inertia * (&jwd * qd) + DVector::from_column_slice(gyro.as_slice());
                bias += jw.transpose() * torque;
            }
        }
        // Symmetrise rounding.
        let mass = (&mass + mass.transpose()) * 0.5;
        Ok((mass, bias))
    }

    pub fn mass_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let zeros = DVector::zeros(q.len());
        self.dynamics_terms(q, &zeros).map(|(m, _)| m)
    }

    /// `h(q, q̇)`: Coriolis, centrifugal and gravity forces lumped together.
    pub fn bias_forces(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>> {
        self.dynamics_terms(q, qd).map(|(_, h)| h)
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        if q.len() != self.dof() {
            return Err(Error::dim("joint positions", self.dof(), q.len()));
        }
        let pts = self.points_generic(q.as_slice());
        let off = 3 * self.dof();
        Ok(DVector::from_column_slice(&pts[off..off + self.task_dim()]))
    }

    /// End-effector position generic over the scalar (length `task_dim`).
    pub fn ee_generic<T: Real>(&self, q: &[T]) -> Vec<T> {
        let pts = self.points_generic(q);
        let off = 3 * self.dof();
        pts[off..off + self.task_dim()].to_vec()
    }

    /// End-effector position, Jacobian and Jacobian derivative.
    pub fn ee_jet(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<Jet> {
        self.check_state(q, qd)?;
        Ok(jet(q.as_slice(), qd.as_slice(), |h| Ok::<_, Infallible>(self.ee_generic(h)))
            .unwrap_or_else(|e| match e {}))
    }

    pub fn ee_jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let zeros = DVector::zeros(q.len());
        self.ee_jet(q, &zeros).map(|j| j.jacobian)
    }

    pub fn ee_jacobian_dot(&self, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.ee_jet(q, qd).map(|j| j.jacobian_dot)
    }

    /// `q̈ = M⁻¹ (S τ − h)`.
    pub fn forward_dynamics(&self, state: &JointState, tau: &DVector<f64>) -> Result<DVector<f64>> {
        if tau.len() != self.n_actuators() {
            return Err(Error::dim("torque", self.n_actuators(), tau.len()));
        }
        let (m, h) = self.dynamics_terms(&state.q, &state.qd)?;
        let rhs = &self.selection * tau - h;
        let chol = m.cholesky().ok_or(Error::SingularSystem("mass matrix"))?;
        Ok(chol.solve(&rhs))
    }

    pub fn kinetic_energy(&self, state: &JointState) -> Result<f64> {
        let m = self.mass_matrix(&state.q)?;
        Ok(0.5 * state.qd.dot(&(m * &state.qd)))
    }

    /// Gravitational potential energy `−Σ m_k g·p_k`.
    pub fn potential_energy(&self, q: &DVector<f64>) -> Result<f64> {
        if q.len() != self.dof() {
            return Err(Error::dim("joint positions", self.dof(), q.len()));
        }
        let pts = self.points_generic(q.as_slice());
        Ok(-(0..self.dof())
            .map(|k| self.masses[k] * (0..3).map(|r| self.gravity[r] * pts[3 * k + r]).sum::<f64>())
            .sum::<f64>())
    }

    pub fn total_energy(&self, state: &JointState) -> Result<f64> {
        Ok(self.kinetic_energy(state)? + self.potential_energy(&state.q)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};

    fn pendulum() -> RobotModel {
        let mut m = RobotModel::planar(vec![1.0], vec![1.0]).unwrap();
        // Angle measured from the downward vertical: "down" is +x.
        m.gravity = [9.81, 0.0, 0.0];
        m
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn pendulum_mass_and_gravity() {
        let p = pendulum();
        assert_eq!(p.mass_matrix(&v(&[0.3])).unwrap(), DMatrix::from_element(1, 1, 1.0));
        let h = p.bias_forces(&v(&[FRAC_PI_2]), &v(&[0.0])).unwrap();
        assert!((h[0] - 9.81).abs() < 1e-12);
    }

    #[test]
    fn two_link_mass_matrix_at_right_angle() {
        let m = RobotModel::preset("planar2").unwrap();
        let mm = m.mass_matrix(&v(&[0.0, FRAC_PI_2])).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 1.0]);
        assert!((mm - expected).abs().max() < 1e-12);
    }

    #[test]
    fn bias_vanishes_at_rest_without_gravity() {
        for name in ["planar2", "planar3", "spatial3r"] {
            let mut m = RobotModel::preset(name).unwrap();
            m.gravity = [0.0; 3];
            let q = DVector::from_fn(m.dof(), |i, _| 0.3 * i as f64 - 0.2);
            let h = m.bias_forces(&q, &DVector::zeros(m.dof())).unwrap();
            assert!(h.norm() < 1e-14, "{name}");
        }
    }

    #[test]
    fn planar_forward_kinematics() {
        let m = RobotModel::preset("planar2").unwrap();
        let p = m.forward_kinematics(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(p, v(&[2.0, 0.0]));
        let p = m.forward_kinematics(&v(&[FRAC_PI_2, 0.0])).unwrap();
        assert!((p - v(&[0.0, 2.0])).norm() < 1e-15);
    }

    #[test]
    fn planar_jacobian_at_zero() {
        let m = RobotModel::preset("planar2").unwrap();
        let j = m.ee_jacobian(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 1.0]));
        let jd = m.ee_jacobian_dot(&v(&[0.4, -0.3]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(jd, DMatrix::zeros(2, 2));
    }

    #[test]
    fn forward_dynamics_examples() {
        let mut p = pendulum();
        p.gravity = [0.0; 3];
        let a = p.forward_dynamics(&JointState::from_slices(&[0.2], &[0.0]), &v(&[2.0])).unwrap();
        assert!((a[0] - 2.0).abs() < 1e-15);

        let m = RobotModel::preset("spatial3r").unwrap();
        let s = JointState::from_slices(&[0.3, -0.4, 1.0], &[0.5, -0.2, 0.1]);
        let h = m.bias_forces(&s.q, &s.qd).unwrap();
        let a = m.forward_dynamics(&s, &h).unwrap();
        assert!(a.norm() < 1e-12);
    }

    #[test]
    fn spatial_extended_pose() {
        let m = RobotModel::preset("spatial3r").unwrap();
        // Links 2 and 3 horizontal along +x.
        let p = m.forward_kinematics(&v(&[0.0, 0.0, 0.0])).unwrap();
        assert!((p - v(&[0.8, 0.0, 0.4])).norm() < 1e-15);
        // Yaw by π/2 swings the arm onto +y.
        let p = m.forward_kinematics(&v(&[FRAC_PI_2, 0.0, 0.0])).unwrap();
        assert!((p - v(&[0.0, 0.8, 0.4])).norm() < 1e-15);
        // Positive shoulder pitch points the arm down.
        let p = m.forward_kinematics(&v(&[0.0, FRAC_PI_2, 0.0])).unwrap();
        assert!((p - v(&[0.0, 0.0, -0.4])).norm() < 1e-15);
        let _ = PI;
    }

    #[test]
    fn validation_catches_bad_models() {
        let mut m = RobotModel::preset("planar2").unwrap();
        m.masses[0] = 0.0;
        assert!(m.validate().is_err());
        let mut m = RobotModel::preset("planar2").unwrap();
        m.limits.q_min[1] = 5.0;
        assert!(m.validate().is_err());
        let mut m = RobotModel::preset("planar2").unwrap();
        m.selection = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(m.validate().is_err());
        let mut m = RobotModel::preset("planar2").unwrap();
        m.selection = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        m.limits.tau_max = vec![10.0];
        assert!(m.validate().is_ok());
        assert_eq!(m.n_actuators(), 1);
    }
}
