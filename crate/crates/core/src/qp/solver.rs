use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sizes of the `[q̈, τ, ξ]` blocks of a controller QP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Partition {
    pub n: usize,
    pub n_tau: usize,
    pub s: usize,
}

impl Partition {
    pub fn dim(&self) -> usize {
        self.n + self.n_tau + self.s
    }
}

/// `min ½ zᵀ𝒲z + wᵀz  s.t.  C_E z + c_E = 0,  C_I z + c_I ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub w_cost: DMatrix<f64>,
    pub w_lin: DVector<f64>,
    pub c_e: DMatrix<f64>,
    pub c_e_off: DVector<f64>,
    pub c_i: DMatrix<f64>,
    pub c_i_off: DVector<f64>,
    pub partition: Option<Partition>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    Infeasible,
    MaxIter,
}

/// Residuals of the first-order optimality conditions, all ∞-norms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub equality: f64,
    /// Largest violation `max(0, −(C_I z + c_I))`.
    pub inequality: f64,
    pub complementarity: f64,
    /// Most negative inequality multiplier, or 0.
    pub dual_infeasibility: f64,
}

impl KktReport {
    pub fn within_bounds(&self) -> bool {
        self.equality <= 1e-8 && self.inequality <= 1e-8 && self.stationarity <= 1e-6 && self.complementarity <= 1e-8
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub kkt: KktReport,
    /// Active inequality rows, ascending.
    pub active_set: Vec<usize>,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub objective: f64,
    /// Objective after every primal iteration of the feasible phase.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub partition: Option<Partition>,
}

impl QpSolution {
    fn block(&self, from: usize, len: usize) -> DVector<f64> {
        self.z.rows(from, len).into_owned()
    }

    pub fn qdd(&self) -> Option<DVector<f64>> {
        self.partition.map(|p| self.block(0, p.n))
    }

    pub fn tau(&self) -> Option<DVector<f64>> {
        self.partition.map(|p| self.block(p.n, p.n_tau))
    }

    pub fn slack(&self) -> Option<DVector<f64>> {
        self.partition.map(|p| self.block(p.n + p.n_tau, p.s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub max_iter: usize,
    /// Feasibility tolerance on constraint values.
    pub feas_tol: f64,
    /// Relative step size below which an iterate is a working-set minimiser.
    pub step_tol: f64,
    /// Relative tolerance for declaring a multiplier negative.
    pub dual_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 500,
            feas_tol: 1e-10,
            step_tol: 1e-12,
            dual_tol: 1e-12,
        }
    }
}

impl QpProblem {
    /// Unconstrained problem.
    pub fn new(w_cost: DMatrix<f64>, w_lin: DVector<f64>) -> Self {
        let d = w_lin.len();
        Self {
            w_cost,
            w_lin,
            c_e: DMatrix::zeros(0, d),
            c_e_off: DVector::zeros(0),
            c_i: DMatrix::zeros(0, d),
            c_i_off: DVector::zeros(0),
            partition: None,
        }
    }

    pub fn with_equalities(mut self, c: DMatrix<f64>, off: DVector<f64>) -> Self {
        self.c_e = c;
        self.c_e_off = off;
        self
    }

    pub fn with_inequalities(mut self, c: DMatrix<f64>, off: DVector<f64>) -> Self {
        self.c_i = c;
        self.c_i_off = off;
        self
    }

    pub fn dim(&self) -> usize {
        self.w_lin.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.w_cost * z)) + self.w_lin.dot(z)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.w_cost.nrows() != d || self.w_cost.ncols() != d {
            return Err(Error::dim("qp cost matrix", d, self.w_cost.nrows()));
        }
        if self.c_e.ncols() != d {
            return Err(Error::dim("equality matrix columns", d, self.c_e.ncols()));
        }
        if self.c_e.nrows() != self.c_e_off.len() {
            return Err(Error::dim("equality offset", self.c_e.nrows(), self.c_e_off.len()));
        }
        if self.c_i.ncols() != d {
            return Err(Error::dim("inequality matrix columns", d, self.c_i.ncols()));
        }
        if self.c_i.nrows() != self.c_i_off.len() {
            return Err(Error::dim("inequality offset", self.c_i.nrows(), self.c_i_off.len()));
        }
        if let Some(p) = self.partition {
            if p.dim() != d {
                return Err(Error::dim("qp partition", d, p.dim()));
            }
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|x| x.is_finite());
        let finite_v = |m: &DVector<f64>| m.iter().all(|x| x.is_finite());
        if !(finite(&self.w_cost)
            && finite_v(&self.w_lin)
            && finite(&self.c_e)
            && finite_v(&self.c_e_off)
            && finite(&self.c_i)
            && finite_v(&self.c_i_off))
        {
            return Err(Error::NonFinite("qp data"));
        }
        let scale = 1.0 + self.w_cost.abs().max();
        if (&self.w_cost - self.w_cost.transpose()).abs().max() > 1e-12 * scale {
            return Err(Error::InvalidParameter("qp cost matrix must be symmetric".into()));
        }
        Ok(())
    }

    /// `C_I z + c_I`.
    pub fn inequality_values(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.c_i * z + &self.c_i_off
    }

    /// Optimality residuals of `z` with the given multipliers.
    pub fn kkt_report(&self, z: &DVector<f64>, lambda: &DVector<f64>, mu: &DVector<f64>) -> KktReport {
        let grad = &self.w_cost * z + &self.w_lin - self.c_e.transpose() * lambda - self.c_i.transpose() * mu;
        let eq = &self.c_e * z + &self.c_e_off;
        let r = self.inequality_values(z);
        KktReport {
            stationarity: inf_norm(&grad),
            equality: inf_norm(&eq),
            inequality: r.iter().fold(0.0, |m, &x| m.max(-x)),
            complementarity: r.iter().zip(mu.iter()).fold(0.0, |m, (a, b)| m.max((a * b).abs())),
            dual_infeasibility: mu.iter().fold(0.0, |m, &x| m.max(-x)),
        }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `min ½ zᵀWz + wᵀz  s.t.  A z + c = 0` and returns `(z, ν)` with
/// `W z + w = Aᵀ ν`.
pub fn solve_eqp(
    w: &DMatrix<f64>,
    lin: &DVector<f64>,
    a: &DMatrix<f64>,
    c: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = lin.len();
    let m = a.nrows();
    if let Some(chol) = w.clone().cholesky() {
        if m == 0 {
            return Ok((chol.solve(&(-lin)), DVector::zeros(0)));
        }
        let winv_at = chol.solve(&a.transpose());
        let schur = a * &winv_at;
        let winv_w = chol.solve(lin);
        if let Some(sc) = schur.clone().cholesky() {
            let nu = sc.solve(&(a * &winv_w - c));
            let z = &winv_at * &nu - winv_w;
            let resid = inf_norm(&(a * &z + c));
            let scale = 1.0 + inf_norm(c) + a.abs().max() * inf_norm(&z);
            if resid <= 1e-9 * scale {
                return Ok((z, nu));
            }
        }
    }
    let mut k = DMatrix::zeros(d + m, d + m);
    k.view_mut((0, 0), (d, d)).copy_from(w);
    k.view_mut((0, d), (d, m)).copy_from(&(-a.transpose()));
    k.view_mut((d, 0), (m, d)).copy_from(a);
    let mut rhs = DVector::zeros(d + m);
    rhs.rows_mut(0, d).copy_from(&(-lin));
    rhs.rows_mut(d, m).copy_from(&(-c));
    let lu = k.full_piv_lu();
    let sol = lu.solve(&rhs).ok_or(Error::SingularSystem("qp kkt"))?;
    if !sol.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularSystem("qp kkt"));
    }
    Ok((sol.rows(0, d).into_owned(), sol.rows(d, m).into_owned()))
}

/// Rows of `c` that are linearly independent of the rows kept before them.
fn independent_rows(c: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for i in 0..c.nrows() {
        let row = c.row(i).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut r = row.clone();
        for _ in 0..2 {
            for b in &basis {
                let p = b.dot(&r);
                r.axpy(-p, b, 1.0);
            }
        }
        let rn = r.norm();
        if rn > 1e-10 * norm {
            basis.push(r / rn);
            keep.push(i);
        }
    }
    keep
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

fn select(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| v[rows[i]])
}

/// Dense primal active-set solver with a warm-start cache.
#[derive(Clone, Debug, Default)]
pub struct ActiveSetSolver {
    pub settings: SolverSettings,
    warm: Option<Vec<usize>>,
}

struct Prepared<'a> {
    p: &'a QpProblem,
    /// Independent equality rows.
    eq_rows: Vec<usize>,
    a_eq: DMatrix<f64>,
    c_eq: DVector<f64>,
}

impl<'a> Prepared<'a> {
    fn working(&self, set: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.p.dim();
        let ne = self.eq_rows.len();
        let mut a = DMatrix::zeros(ne + set.len(), d);
        let mut c = DVector::zeros(ne + set.len());
        a.rows_mut(0, ne).copy_from(&self.a_eq);
        c.rows_mut(0, ne).copy_from(&self.c_eq);
        for (k, &i) in set.iter().enumerate() {
            a.row_mut(ne + k).copy_from(&self.p.c_i.row(i));
            c[ne + k] = self.p.c_i_off[i];
        }
        (a, c)
    }

    /// Whether inequality row `i` is linearly independent of the working set.
    fn extends_working_set(&self, set: &[usize], i: usize) -> bool {
        let mut rows = set.to_vec();
        rows.push(i);
        let (a, _) = self.working(&rows);
        independent_rows(&a).len() == a.nrows()
    }

    fn eqp(&self, set: &[usize]) -> Result<(DVector<f64>, DVector<f64>)> {
        let (a, c) = self.working(set);
        solve_eqp(&self.p.w_cost, &self.p.w_lin, &a, &c)
    }
}

impl ActiveSetSolver {
    pub fn new(settings: SolverSettings) -> Self {
        Self { settings, warm: None }
    }

    /// Forgets the cached active set.
    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn warm_set(&self) -> Option<&[usize]> {
        self.warm.as_deref()
    }

    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution> {
        let warm = self.warm.take();
        let sol = solve_with(p, &self.settings, warm.as_deref())?;
        if sol.status == QpStatus::Solved {
            self.warm = Some(sol.active_set.clone());
        }
        Ok(sol)
    }
}

/// Cold-start solve with default settings.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    solve_with(p, &SolverSettings::default(), None)
}

fn solve_with(p: &QpProblem, st: &SolverSettings, warm: Option<&[usize]>) -> Result<QpSolution> {
    p.validate()?;
    let n_i = p.c_i.nrows();
    let eq_rows = independent_rows(&p.c_e);
    let prep = Prepared {
        p,
        a_eq: select_rows(&p.c_e, &eq_rows),
        c_eq: select(&p.c_e_off, &eq_rows),
        eq_rows,
    };
    let ineq_tol = |r: &DVector<f64>| r.iter().all(|&x| x >= -st.feas_tol);

    let mut start: Option<(DVector<f64>, Vec<usize>)> = None;
    if let Some(set) = warm {
        let valid = set.windows(2).all(|w| w[0] < w[1]) && set.iter().all(|&i| i < n_i);
        if valid {
            if let Ok((z, _)) = prep.eqp(set) {
                if ineq_tol(&p.inequality_values(&z)) && equalities_hold(p, &z, st) {
                    start = Some((z, set.to_vec()));
                }
            }
        }
    }
    let (mut z, mut work) = match start {
        Some(s) => s,
        None => match phase_one(&prep, st)? {
            Some(z) => (z, Vec::new()),
            None => return Ok(infeasible(p, &prep)),
        },
    };
    if !equalities_hold(p, &z, st) {
        return Ok(infeasible(p, &prep));
    }

    let mut trace = Vec::new();
    let (status, iterations) = active_set_loop(&prep, &mut z, &mut work, st, &mut trace)?;

    let (z, lambda, mu) = if status == QpStatus::Solved {
        // Re-solve on the final set so the result depends only on that set.
        let (z_final, nu) = prep.eqp(&work)?;
        if ineq_tol(&p.inequality_values(&z_final)) {
            let (l, m) = scatter_multipliers(p, &prep, &work, &nu);
            (z_final, l, m)
        } else {
            let (l, m) = scatter_multipliers(p, &prep, &work, &nu);
            (z, l, m)
        }
    } else {
        let nu = prep.eqp(&work).map(|(_, nu)| nu).unwrap_or_else(|_| DVector::zeros(prep.eq_rows.len() + work.len()));
        let (l, m) = scatter_multipliers(p, &prep, &work, &nu);
        (z, l, m)
    };
    let kkt = p.kkt_report(&z, &lambda, &mu);
    let objective = p.objective(&z);
    Ok(QpSolution {
        z,
        status,
        kkt,
        active_set: work,
        eq_multipliers: lambda,
        ineq_multipliers: mu,
        objective,
        objective_trace: trace,
        iterations,
        partition: p.partition,
    })
}

fn equalities_hold(p: &QpProblem, z: &DVector<f64>, st: &SolverSettings) -> bool {
    let r = &p.c_e * z + &p.c_e_off;
    let scale = 1.0 + inf_norm(&p.c_e_off) + p.c_e.abs().max() * inf_norm(z);
    inf_norm(&r) <= st.feas_tol.max(1e-9) * scale
}

fn scatter_multipliers(
    p: &QpProblem,
    prep: &Prepared<'_>,
    work: &[usize],
    nu: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let mut lambda = DVector::zeros(p.c_e.nrows());
    for (k, &i) in prep.eq_rows.iter().enumerate() {
        lambda[i] = nu[k];
    }
    let mut mu = DVector::zeros(p.c_i.nrows());
    let ne = prep.eq_rows.len();
    for (k, &i) in work.iter().enumerate() {
        mu[i] = nu[ne + k];
    }
    (lambda, mu)
}

fn infeasible(p: &QpProblem, prep: &Prepared<'_>) -> QpSolution {
    let z = min_norm_equality_point(prep).unwrap_or_else(|_| DVector::zeros(p.dim()));
    let lambda = DVector::zeros(p.c_e.nrows());
    let mu = DVector::zeros(p.c_i.nrows());
    QpSolution {
        kkt: p.kkt_report(&z, &lambda, &mu),
        objective: p.objective(&z),
        z,
        status: QpStatus::Infeasible,
        active_set: Vec::new(),
        eq_multipliers: lambda,
        ineq_multipliers: mu,
        objective_trace: Vec::new(),
        iterations: 0,
        partition: p.partition,
    }
}

/// Minimum-norm `z` with `A_E z + c_E = 0` over the independent rows.
fn min_norm_equality_point(prep: &Prepared<'_>) -> Result<DVector<f64>> {
    let d = prep.p.dim();
    if prep.eq_rows.is_empty() {
        return Ok(DVector::zeros(d));
    }
    let (z, _) = solve_eqp(&DMatrix::identity(d, d), &DVector::zeros(d), &prep.a_eq, &prep.c_eq)?;
    Ok(z)
}

/// A feasible starting point, or `None` if the constraints are inconsistent.
fn phase_one(prep: &Prepared<'_>, st: &SolverSettings) -> Result<Option<DVector<f64>>> {
    let p = prep.p;
    let d = p.dim();
    let z0 = min_norm_equality_point(prep)?;
    if !equalities_hold(p, &z0, st) {
        return Ok(None);
    }
    let r0 = p.inequality_values(&z0);
    let worst = r0.iter().fold(0.0_f64, |m, &x| m.max(-x));
    if worst <= st.feas_tol {
        return Ok(Some(z0));
    }
    let scale = 1.0 + worst + inf_norm(&z0);
    for eps in [1e-4, 1e-7, 1e-10] {
        let (sol, work) = elastic_solve(prep, &z0, worst, eps / (scale * scale), st)?;
        let t = sol[d];
        if t > 1e-7 * scale {
            continue;
        }
        let z = sol.rows(0, d).into_owned();
        let rows: Vec<usize> = work.into_iter().filter(|&i| i < p.c_i.nrows()).collect();
        let (a, c) = prep.working(&rows);
        let keep = independent_rows(&a);
        let (a, c) = (select_rows(&a, &keep), select(&c, &keep));
        let z = match solve_eqp(&DMatrix::identity(d, d), &(-&z), &a, &c) {
            Ok((zc, _)) => zc,
            Err(_) => z,
        };
        let viol = p.inequality_values(&z).iter().fold(0.0_f64, |m, &x| m.max(-x));
        if viol <= st.feas_tol.max(1e-9) && equalities_hold(p, &z, st) {
            return Ok(Some(z));
        }
    }
    Ok(None)
}

/// Active-set solve of the elastic problem in `(z, t)`:
/// `min t + ε/2 (‖z − z0‖² + t²)` subject to the equalities,
/// `C_I z + c_I + t ≥ 0` and `t ≥ 0`. Returns the solution and working set.
fn elastic_solve(
    prep: &Prepared<'_>,
    z0: &DVector<f64>,
    t0: f64,
    eps: f64,
    st: &SolverSettings,
) -> Result<(DVector<f64>, Vec<usize>)> {
    let p = prep.p;
    let d = p.dim();
    let n_i = p.c_i.nrows();
    let ne = prep.eq_rows.len();
    let h = DMatrix::identity(d + 1, d + 1) * eps;
    let mut lin = DVector::zeros(d + 1);
    lin.rows_mut(0, d).copy_from(&(-z0 * eps));
    lin[d] = 1.0;
    let mut ce = DMatrix::zeros(ne, d + 1);
    ce.view_mut((0, 0), (ne, d)).copy_from(&prep.a_eq);
    let mut ci = DMatrix::zeros(n_i + 1, d + 1);
    ci.view_mut((0, 0), (n_i, d)).copy_from(&p.c_i);
    ci.column_mut(d).fill(1.0);
    let mut ci_off = DVector::zeros(n_i + 1);
    ci_off.rows_mut(0, n_i).copy_from(&p.c_i_off);
    let elastic = QpProblem {
        w_cost: h,
        w_lin: lin,
        c_e: ce,
        c_e_off: prep.c_eq.clone(),
        c_i: ci,
        c_i_off: ci_off,
        partition: None,
    };
    let ep = Prepared {
        p: &elastic,
        a_eq: elastic.c_e.clone(),
        c_eq: elastic.c_e_off.clone(),
        eq_rows: (0..ne).collect(),
    };
    let mut z = DVector::zeros(d + 1);
    z.rows_mut(0, d).copy_from(z0);
    z[d] = t0;
    let mut work = Vec::new();
    let mut trace = Vec::new();
    active_set_loop(&ep, &mut z, &mut work, st, &mut trace)?;
    Ok((z, work))
}

/// Primal active-set iterations from a feasible `z` whose active rows
/// include `work`. Leaves `z` at the last iterate.
fn active_set_loop(
    prep: &Prepared<'_>,
    z: &mut DVector<f64>,
    work: &mut Vec<usize>,
    st: &SolverSettings,
    trace: &mut Vec<f64>,
) -> Result<(QpStatus, usize)> {
    let p = prep.p;
    let n_i = p.c_i.nrows();
    trace.push(p.objective(z));
    let mut iterations = 0;
    while iterations < st.max_iter {
        iterations += 1;
        let (target, nu) = prep.eqp(work)?;
        let step = &target - &*z;
        if inf_norm(&step) <= st.step_tol * (1.0 + inf_norm(z)) {
            let ne = prep.eq_rows.len();
            let mu_scale = 1.0 + inf_norm(&nu);
            let mut worst: Option<(usize, f64)> = None;
            for k in 0..work.len() {
                let m = nu[ne + k];
                if m < -st.dual_tol * mu_scale && worst.map_or(true, |(_, w)| m < w) {
                    worst = Some((k, m));
                }
            }
            match worst {
                None => return Ok((QpStatus::Solved, iterations)),
                Some((k, _)) => {
                    work.remove(k);
                }
            }
        } else {
            let mut alpha = 1.0;
            let mut blocking = None;
            let step_norm = step.norm();
            for i in 0..n_i {
                if work.contains(&i) {
                    continue;
                }
                let ap = p.c_i.row(i).dot(&step.transpose());
                // Rows in the span of the working set see only roundoff here.
                if ap < -1e-13 * p.c_i.row(i).norm() * step_norm && prep.extends_working_set(work, i) {
                    let r = p.c_i.row(i).dot(&z.transpose()) + p.c_i_off[i];
                    let a = (-r / ap).max(0.0);
                    if a < alpha {
                        alpha = a;
                        blocking = Some(i);
                    }
                }
            }
            z.axpy(alpha, &step, 1.0);
            if let Some(i) = blocking {
                let pos = work.partition_point(|&j| j < i);
                work.insert(pos, i);
            }
            trace.push(p.objective(z));
        }
    }
    Ok((QpStatus::MaxIter, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn unconstrained_minimiser() {
        let a = v(&[1.0, -2.0, 0.5]);
        let p = QpProblem::new(DMatrix::identity(3, 3), -&a);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.z - a).norm() < 1e-14);
    }

    #[test]
    fn sum_constraint_is_symmetric() {
        let p = QpProblem::new(DMatrix::identity(4, 4), DVector::zeros(4))
            .with_equalities(DMatrix::from_element(1, 4, 1.0), v(&[-1.0]));
        let s = solve_qp(&p).unwrap();
        assert!((s.z - DVector::from_element(4, 0.25)).norm() < 1e-14);
        assert!(s.kkt.within_bounds());
    }

    #[test]
    fn active_bound_gets_positive_multiplier() {
        // min ½(z−2)² s.t. 1 − z ≥ 0
        let p = QpProblem::new(DMatrix::identity(1, 1), v(&[-2.0]))
            .with_inequalities(DMatrix::from_element(1, 1, -1.0), v(&[1.0]));
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.z[0] - 1.0).abs() < 1e-14);
        assert_eq!(s.active_set, vec![0]);
        assert!((s.ineq_multipliers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_box_is_reported() {
        // z ≥ 1 and z ≤ 0
        let p = QpProblem::new(DMatrix::identity(1, 1), v(&[0.0]))
            .with_inequalities(DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), v(&[-1.0, 0.0]));
        assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible_and_redundant_ones_are_dropped() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2)).with_equalities(c.clone(), v(&[-1.0, -3.0]));
        assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2)).with_equalities(c, v(&[-1.0, -2.0]));
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.z - v(&[0.5, 0.5])).norm() < 1e-14);
        assert!(s.kkt.within_bounds());
    }

    #[test]
    fn infeasible_start_goes_through_phase_one() {
        // min ½‖z‖² s.t. z0 ≥ 1, z1 ≥ 2, z0 + z1 ≤ 10
        let ci = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2)).with_inequalities(ci, v(&[-1.0, -2.0, 10.0]));
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.z.clone() - v(&[1.0, 2.0])).norm() < 1e-12);
        assert_eq!(s.active_set, vec![0, 1]);
        assert!(s.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn warm_start_reproduces_cold_start_bitwise() {
        let ci = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        let p = QpProblem::new(DMatrix::identity(2, 2), v(&[0.3, -0.1])).with_inequalities(ci, v(&[-1.0, -2.0, 10.0]));
        let cold = solve_qp(&p).unwrap();
        let mut solver = ActiveSetSolver::default();
        let first = solver.solve(&p).unwrap();
        let second = solver.solve(&p).unwrap();
        assert_eq!(cold.z, first.z);
        assert_eq!(first.z, second.z);
        assert_eq!(first.active_set, second.active_set);
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(3));
        assert!(solve_qp(&p).is_err());
        let p = QpProblem::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), DVector::zeros(2));
        assert!(solve_qp(&p).is_err());
        let p = QpProblem::new(DMatrix::identity(1, 1), v(&[f64::NAN]));
        assert_eq!(solve_qp(&p), Err(Error::NonFinite("qp data")));
    }
}
