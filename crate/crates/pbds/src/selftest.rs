//! Oracle and property checks run by `pbds selftest` and the acceptance suite.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use pbds_core::pbds::{combine, PbdsTree, PullbackTerm, TaskField};
use pbds_core::sim::ReferenceSample;
use pbds_core::{
    reference_rollout, solve_qp, step_plant, Chart, Dissipation, DsState, Error, Integrator, JointState,
    MassModel, Potential, QpProblem, QpStatus, RobotModel, SecondOrderDS, SimConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracle;
use crate::presets;
use crate::runner;

#[derive(Clone, Copy, Debug)]
pub struct Options {
    pub quick: bool,
    pub seed: u64,
}

impl Default for Options {
    fn default() -> Self {
        Self { quick: false, seed: 7 }
    }
}

impl Options {
    fn count(&self, full: usize) -> usize {
        if self.quick {
            (full / 10).max(5)
        } else {
            full
        }
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt))
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_all(o: &Options) -> Report {
    Report {
        checks: vec![
            geometry(o),
            chart_consistency(),
            combine_oracle(o),
            qp_oracle(o),
            dynamics_oracle(o),
            passivity(),
            stability(o),
        ],
    }
}

fn sample_point(chart: &Chart, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match chart {
        Chart::Euclidean { dim } => (0..*dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
        Chart::SphereSpherical => vec![
            rng.random_range(0.1..std::f64::consts::PI - 0.1),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        ],
        Chart::SphereStereographic => vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
        Chart::HalfLine { .. } => vec![rng.random_range(0.02..3.0)],
    }
}

/// Closed-form metrics and Christoffel symbols against finite-difference
/// Levi-Civita oracles, 100 interior points per chart, under 5 s.
pub fn geometry(o: &Options) -> Check {
    let start = Instant::now();
    let mut rng = o.rng(1);
    let charts = [
        Chart::Euclidean { dim: 3 },
        Chart::SphereSpherical,
        Chart::SphereStereographic,
        Chart::HalfLine { beta: 1.5, sigma: 0.3 },
    ];
    let mut worst = 0.0f64;
    let mut failure = None;
    for chart in &charts {
        for _ in 0..o.count(100) {
            let x = sample_point(chart, &mut rng);
            let xv = DVector::from_column_slice(&x);
            let (g, gamma) = match (chart.metric_at(&xv), chart.christoffel_at(&xv)) {
                (Ok(g), Ok(c)) => (g, c),
                (Err(e), _) | (_, Err(e)) => {
                    failure.get_or_insert(format!("{} at {x:?}: {e}", chart.name()));
                    continue;
                }
            };
            worst = worst.max((g - oracle::metric(chart, &x)).amax());
            let reference = oracle::christoffel(chart, &x);
            let d = x.len();
            for k in 0..d {
                for i in 0..d {
                    for j in 0..d {
                        worst = worst.max((gamma.get(k, i, j) - reference[k][i][j]).abs());
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = failure.is_none() && worst <= 1e-5 && secs < 5.0;
    let detail = failure.unwrap_or_else(|| format!("max abs error {worst:.2e}, {secs:.2} s"));
    Check::new("geometry oracle", passed, detail)
}

fn embedded_gap(a: &[ReferenceSample], b: &[ReferenceSample]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (&p.embedded - &q.embedded).amax())
        .fold(0.0, f64::max)
}

/// One S² DS integrated in the spherical and the stereographic chart from the
/// same embedded state; embedded trajectories agree within 1e-4 over 5 s.
pub fn chart_consistency() -> Check {
    let run = || -> pbds_core::Result<(f64, usize)> {
        let target = [0.3623577544766736 * 0.9, 0.9320390859672263 * 0.9, 0.0];
        let norm = target.iter().map(|t| t * t).sum::<f64>().sqrt();
        let target = target.map(|t| t / norm);
        let ds = SecondOrderDS::new(
            Chart::SphereSpherical,
            Potential::Geodesic { target, stiffness: 2.0 },
            Dissipation::MetricProportional { gain: 0.8 },
        )?;
        let stereo = ds.in_chart(Chart::SphereStereographic)?;
        let x = DVector::from_vec(vec![1.9, -0.4]);
        let v = DVector::from_vec(vec![-0.3, 0.5]);
        let (xs, vs) = Chart::SphereSpherical.transfer_state(&Chart::SphereStereographic, &x, &v)?;
        let sim = SimConfig {
            dt: 1e-3,
            duration: 5.0,
            integrator: Integrator::Rk4,
            log_stride: 1,
        };
        let a = reference_rollout(&TaskField::Ds(ds), &DsState::new(x, v), &sim)?;
        let b = reference_rollout(&TaskField::Ds(stereo), &DsState::new(xs, vs), &sim)?;
        if a.len() != b.len() {
            return Err(Error::InvalidParameter("rollouts differ in length".into()));
        }
        let own_chart = a.iter().all(|s| s.chart == Chart::SphereSpherical)
            && b.iter().all(|s| s.chart == Chart::SphereStereographic);
        if !own_chart {
            return Err(Error::InvalidParameter("a rollout left its chart".into()));
        }
        Ok((embedded_gap(&a, &b), a.len()))
    };
    match run() {
        Ok((gap, samples)) => Check::new(
            "chart consistency",
            gap <= 1e-4,
            format!("max embedded gap {gap:.2e} over {samples} samples"),
        ),
        Err(e) => Check::new("chart consistency", false, e.to_string()),
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    a.transpose() * a + DMatrix::identity(n, n) * 0.2
}

fn relative_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// `combine` against an SVD solve of the stacked weighted system on random
/// multi-task instances, plus rank-deficient instances rejected at λ = 0.
pub fn combine_oracle(o: &Options) -> Check {
    let mut rng = o.rng(3);
    let mut worst = 0.0f64;
    let mut problems = Vec::new();
    let count = o.count(500);
    let mut cases = 0;
    while cases < count {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(1..=4);
        let mut terms = Vec::new();
        for _ in 0..k {
            let m = rng.random_range(1..=6);
            terms.push((random_matrix(&mut rng, m, n), random_matrix(&mut rng, m, 1).column(0).into_owned(), random_spd(&mut rng, m)));
        }
        let rows: usize = terms.iter().map(|t| t.0.nrows()).sum();
        if rows < n {
            continue;
        }
        let lambda = if cases % 2 == 0 { 0.0 } else { rng.random_range(1e-6..1e-2) };
        let Some(expected) = oracle::stacked_wls(&terms, n, lambda) else {
            continue;
        };
        cases += 1;
        let pull: Vec<PullbackTerm> = terms
            .iter()
            .map(|(j, b, w)| PullbackTerm {
                jacobian: j.clone(),
                rhs: b.clone(),
                weight: w.clone(),
            })
            .collect();
        match combine(&pull, n, lambda) {
            Ok(q) => worst = worst.max(relative_gap(&q, &expected)),
            Err(e) => problems.push(format!("regular instance rejected: {e}")),
        }
    }
    for s in 0..count / 10 {
        let n = 2 + s % 5;
        let j = random_matrix(&mut rng, n - 1, n);
        let term = PullbackTerm {
            jacobian: j.clone(),
            rhs: DVector::from_element(n - 1, 1.0),
            weight: DMatrix::identity(n - 1, n - 1),
        };
        let dup = term.clone();
        if !matches!(combine(&[term, dup], n, 0.0), Err(Error::SingularGram)) {
            problems.push(format!("rank-deficient {n}-dof instance accepted at lambda = 0"));
        }
    }
    let passed = problems.is_empty() && worst <= 1e-8;
    let detail = problems
        .first()
        .cloned()
        .unwrap_or_else(|| format!("{cases} instances, max relative error {worst:.2e}"));
    Check::new("combine oracle", passed, detail)
}

/// Random strictly convex QP with a known feasible point.
pub fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.random_range(1..=6);
    let me = rng.random_range(0..=(n - 1).min(2));
    let mi = rng.random_range(0..=4);
    let z0 = random_matrix(rng, n, 1).column(0).into_owned();
    let e = random_matrix(rng, me, n);
    let e_off = -(&e * &z0);
    let c = random_matrix(rng, mi, n);
    let slack = DVector::from_fn(mi, |_, _| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) });
    let c_off = slack - &c * &z0;
    let lin = random_matrix(rng, n, 1).column(0).into_owned() * 3.0;
    QpProblem::new(random_spd(rng, n), lin)
        .with_equalities(e, e_off)
        .with_inequalities(c, c_off)
}

/// `solve_qp` against exhaustive active-set enumeration; every solution must
/// also satisfy the KKT residual bounds.
pub fn qp_oracle(o: &Options) -> Check {
    let mut rng = o.rng(4);
    let mut worst = 0.0f64;
    let mut problems = Vec::new();
    let count = o.count(500);
    for i in 0..count {
        let p = random_qp(&mut rng);
        let Some(expected) = oracle::enumerate_qp(&p.w_cost, &p.w_lin, &p.c_e, &p.c_e_off, &p.c_i, &p.c_i_off, 1e-9)
        else {
            problems.push(format!("instance {i}: enumeration found no KKT point"));
            continue;
        };
        match solve_qp(&p) {
            Ok(s) if s.status == QpStatus::Solved => {
                worst = worst.max((&s.z - &expected.z).amax());
                if !s.kkt.within_bounds() {
                    problems.push(format!("instance {i}: KKT residuals {:?}", s.kkt));
                }
            }
            Ok(s) => problems.push(format!("instance {i}: status {:?}", s.status)),
            Err(e) => problems.push(format!("instance {i}: {e}")),
        }
    }
    let passed = problems.is_empty() && worst <= 1e-6;
    let detail = problems
        .first()
        .cloned()
        .unwrap_or_else(|| format!("{count} instances, max abs error {worst:.2e}"));
    Check::new("qp oracle", passed, detail)
}

/// Models covered by the dynamics checks.
pub fn dynamics_models() -> Vec<(String, RobotModel)> {
    let mut out = Vec::new();
    for name in ["planar1", "planar2", "planar3", "spatial3r"] {
        let m = RobotModel::preset(name).expect("preset exists");
        let mut other = m.clone();
        other.mass_model = match m.mass_model {
            MassModel::PointMass => MassModel::UniformRod,
            MassModel::UniformRod => MassModel::PointMass,
        };
        out.push((name.to_string(), m));
        out.push((format!("{name} ({:?})", other.mass_model), other));
    }
    out
}

/// Mass matrix and bias forces against the finite-difference Lagrangian
/// oracle; the mass matrix must be SPD at every sample.
pub fn dynamics_oracle(o: &Options) -> Check {
    let mut rng = o.rng(5);
    let mut worst = 0.0f64;
    let mut problems = Vec::new();
    for (name, model) in dynamics_models() {
        let n = model.dof();
        for _ in 0..o.count(200) {
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let qd: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (qv, qdv) = (DVector::from_column_slice(&q), DVector::from_column_slice(&qd));
            let (m, h) = match model.dynamics_terms(&qv, &qdv) {
                Ok(x) => x,
                Err(e) => {
                    problems.push(format!("{name}: {e}"));
                    continue;
                }
            };
            worst = worst.max((&m - oracle::mass_matrix(&model, &q)).amax());
            worst = worst.max((&h - oracle::bias_forces(&model, &q, &qd)).amax());
            let spd = m.clone().symmetric_eigenvalues().min() > 0.0 && (&m - m.transpose()).amax() <= 1e-12;
            if !spd {
                problems.push(format!("{name}: mass matrix not SPD at q = {q:?}"));
            }
        }
    }
    let passed = problems.is_empty() && worst <= 1e-5;
    let detail = problems
        .first()
        .cloned()
        .unwrap_or_else(|| format!("{} models, max abs error {worst:.2e}", dynamics_models().len()));
    Check::new("dynamics oracle", passed, detail)
}

/// Bound constant for `|dE/dt − q̇ᵀSτ| ≤ C·dt` along the passivity runs.
pub const PASSIVITY_C: f64 = 10.0;

/// Torque amplitude (N·m) of the passivity runs.
pub const PASSIVITY_TORQUE: f64 = 0.2;

/// Largest `|ΔE/dt − q̇ᵀSτ| / dt` along a run driven by sinusoidal torques
/// of the given amplitude, with the power evaluated at the step midpoint.
pub fn passivity_ratio(
    model: &RobotModel,
    amplitude: f64,
    dt: f64,
    duration: f64,
    integrator: Integrator,
) -> pbds_core::Result<f64> {
    let n = model.dof();
    let mut s = JointState::new(DVector::from_fn(n, |i, _| 0.3 * i as f64 - 0.2), DVector::from_element(n, 0.5));
    let steps = (duration / dt).round() as usize;
    let mut worst = 0.0f64;
    for k in 0..steps {
        let t = k as f64 * dt;
        let tau = DVector::from_fn(model.n_actuators(), |i, _| amplitude * (1.3 * t + i as f64).sin());
        let next = step_plant(model, &s, &tau, dt, integrator)?;
        let de = (model.total_energy(&next)? - model.total_energy(&s)?) / dt;
        let qd_mid = (&s.qd + &next.qd) * 0.5;
        let power = qd_mid.dot(&(&model.selection * &tau));
        worst = worst.max((de - power).abs() / dt);
        s = next;
    }
    Ok(worst)
}

pub fn passivity() -> Check {
    let mut worst = 0.0f64;
    for (name, model) in dynamics_models() {
        match passivity_ratio(&model, PASSIVITY_TORQUE, 1e-3, 3.0, Integrator::Rk4) {
            Ok(r) => worst = worst.max(r),
            Err(e) => return Check::new("passivity", false, format!("{name}: {e}")),
        }
    }
    Check::new(
        "passivity",
        worst <= PASSIVITY_C,
        format!("max |dE/dt - qd'S tau| / dt = {worst:.3} (bound {PASSIVITY_C})"),
    )
}

/// Bound constant for per-step energy increase `E_{k+1} − E_k ≤ C·dt²`.
pub const ENERGY_C: f64 = 1.0;

/// The sphere attractor subtree collapsed into one DS: its leaves share the
/// chart and carry scalar weights, so the combination is their
/// weight-averaged potential and dissipation.
pub fn collapsed_sphere_ds(tree: &PbdsTree) -> pbds_core::Result<SecondOrderDS> {
    let node = tree
        .find("sphere")
        .ok_or_else(|| Error::InvalidParameter("no sphere node".into()))?;
    let leaves: Vec<_> = node.children().iter().collect();
    let scalar = |l: &pbds_core::TaskNode| {
        let w = l.weight[(0, 0)];
        ((&l.weight - DMatrix::identity(2, 2) * w).amax() == 0.0).then_some(w)
    };
    let weights: Option<Vec<f64>> = leaves.iter().map(|l| scalar(l)).collect();
    let weights = weights.ok_or_else(|| Error::InvalidParameter("sphere leaves need scalar weights".into()))?;
    let total: f64 = weights.iter().sum();
    let mut pot = Vec::new();
    let mut dis = Vec::new();
    for (leaf, w) in leaves.into_iter().zip(weights) {
        let pbds_core::pbds::NodePayload::Leaf(ds) = &leaf.payload else {
            return Err(Error::InvalidParameter("sphere subtree must be flat".into()));
        };
        pot.push((w / total, ds.potential().clone()));
        dis.push((w / total, ds.dissipation().clone()));
    }
    SecondOrderDS::new(Chart::SphereSpherical, Potential::Sum(pot), Dissipation::Sum(dis))
}

/// Per-step energy increase and final geodesic distance for one rollout of
/// the `sphere_attractor` task from the given chart velocity.
pub fn stability_run(v0: [f64; 2]) -> pbds_core::Result<(f64, f64, f64)> {
    let (_, built) = runner::load_str(presets::preset("sphere_attractor").expect("preset"))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let node = built.tree.find("sphere").expect("sphere node");
    let field = node.task_space_field(built.tree.regularization);
    let ds = collapsed_sphere_ds(&built.tree)?;
    let init = DsState::new(DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]), DVector::from_vec(v0.to_vec()));
    let samples = reference_rollout(&field, &init, &built.sim)?;
    let dt = built.sim.dt;
    let mut worst_rise = f64::NEG_INFINITY;
    let mut prev: Option<f64> = None;
    for s in &samples {
        let (x, v) = if s.chart == Chart::SphereSpherical {
            (s.x.clone(), s.v.clone())
        } else {
            s.chart.transfer_state(&Chart::SphereSpherical, &s.x, &s.v)?
        };
        let e = ds.mechanical_energy(&DsState::new(x, v))?;
        if let Some(p) = prev {
            worst_rise = worst_rise.max((e - p) / (dt * dt));
        }
        prev = Some(e);
    }
    let Potential::Sum(parts) = ds.potential() else { unreachable!() };
    let target = parts
        .iter()
        .find_map(|(_, p)| match p {
            Potential::Geodesic { target, .. } => Some(*target),
            _ => None,
        })
        .ok_or_else(|| Error::InvalidParameter("no geodesic attractor".into()))?;
    let last = samples.last().expect("non-empty rollout");
    let cos = (0..3).map(|i| last.embedded[i] * target[i]).sum::<f64>().clamp(-1.0, 1.0);
    Ok((worst_rise, cos.acos(), last.t))
}

/// Energy non-increasing per step within C·dt² and geodesic distance to the
/// attractor ≤ 1e-2 at 15 s, for three sampled initial velocities.
pub fn stability(o: &Options) -> Check {
    let mut rng = o.rng(6);
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_dist = 0.0f64;
    for _ in 0..3 {
        let v0 = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
        match stability_run(v0) {
            Ok((rise, dist, t)) => {
                if (t - 15.0).abs() > 1e-9 {
                    return Check::new("stability", false, format!("rollout ended at t = {t}"));
                }
                worst_rise = worst_rise.max(rise);
                worst_dist = worst_dist.max(dist);
            }
            Err(e) => return Check::new("stability", false, e.to_string()),
        }
    }
    Check::new(
        "stability",
        worst_rise <= ENERGY_C && worst_dist <= 1e-2,
        format!("max energy rise {worst_rise:.3e}·dt², max final distance {worst_dist:.2e}"),
    )
}
