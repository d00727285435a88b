//! Reference implementations used to cross-check `pbds-core`.
//!
//! Each oracle is written from the defining formula with finite differences,
//! SVDs or brute force, and shares no numerical code with the core crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use pbds_core::manifolds::Chart;
use pbds_core::robot::{Geometry, MassModel, RobotModel};

/// Five-point central difference of a vector function along coordinate `i`.
fn diff<F>(f: &F, x: &[f64], i: usize, h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let at = |s: f64| {
        let mut y = x.to_vec();
        y[i] += s * h;
        f(&y)
    };
    let (a, b, c, d) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
    (0..a.len())
        .map(|k| (a[k] - 8.0 * b[k] + 8.0 * c[k] - d[k]) / (12.0 * h))
        .collect()
}

/// Jacobian `∂f/∂x` by five-point differences.
pub fn fd_jacobian<F>(f: F, x: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, x.len());
    for i in 0..x.len() {
        let col = diff(&f, x, i, h);
        for r in 0..m {
            j[(r, i)] = col[r];
        }
    }
    j
}

fn embedding(chart: &Chart, x: &[f64]) -> Vec<f64> {
    match chart {
        Chart::SphereSpherical => {
            let (t, p) = (x[0], x[1]);
            vec![t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
        }
        Chart::SphereStereographic => {
            // inverse of (x, y, z) ↦ (x, y)/(1 − z)
            let s = x[0] * x[0] + x[1] * x[1];
            vec![2.0 * x[0] / (1.0 + s), 2.0 * x[1] / (1.0 + s), (s - 1.0) / (1.0 + s)]
        }
        _ => x.to_vec(),
    }
}

/// Metric as a flat `d²` vector: `JᵀJ` of the embedding for sphere charts,
/// the defining formula otherwise.
fn metric_flat(chart: &Chart, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let g = match chart {
        Chart::HalfLine { beta, sigma } => DMatrix::from_element(1, 1, 1.0 + beta * (-x[0] / sigma).exp()),
        Chart::Euclidean { .. } => DMatrix::identity(d, d),
        _ => {
            let j = fd_jacobian(|y| embedding(chart, y), x, 1e-3);
            j.transpose() * j
        }
    };
    g.as_slice().to_vec()
}

pub fn metric(chart: &Chart, x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(x.len(), x.len(), &metric_flat(chart, x))
}

/// Levi-Civita symbols `Γ^k_ij = ½ g^kl (∂_i g_lj + ∂_j g_li − ∂_l g_ij)`
/// with the metric derivatives taken by finite differences; indexed `[k][i][j]`.
pub fn christoffel(chart: &Chart, x: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let d = x.len();
    let dg: Vec<DMatrix<f64>> = (0..d)
        .map(|l| DMatrix::from_column_slice(d, d, &diff(&|y: &[f64]| metric_flat(chart, y), x, l, 1e-3)))
        .collect();
    let ginv = metric(chart, x).try_inverse().expect("metric is invertible");
    let mut out = vec![vec![vec![0.0; d]; d]; d];
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                out[k][i][j] = 0.5
                    * (0..d)
                        .map(|l| ginv[(k, l)] * (dg[i][(l, j)] + dg[j][(l, i)] - dg[l][(i, j)]))
                        .sum::<f64>();
            }
        }
    }
    out
}

/// `argmin Σ ‖W_i^{½}(J_i q − b_i)‖² + λ‖q‖²` through an SVD of the
/// stacked, square-root-weighted system.
pub fn stacked_wls(terms: &[(DMatrix<f64>, DVector<f64>, DMatrix<f64>)], n: usize, lambda: f64) -> Option<DVector<f64>> {
    let rows: usize = terms.iter().map(|t| t.0.nrows()).sum::<usize>() + if lambda > 0.0 { n } else { 0 };
    let mut a = DMatrix::zeros(rows, n);
    let mut r = DVector::zeros(rows);
    let mut at = 0;
    for (j, b, w) in terms {
        let eig = SymmetricEigen::new(w.clone());
        if eig.eigenvalues.iter().any(|&e| e < 0.0) {
            return None;
        }
        let sq = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
            * eig.eigenvectors.transpose();
        let m = j.nrows();
        a.rows_mut(at, m).copy_from(&(&sq * j));
        r.rows_mut(at, m).copy_from(&(&sq * b));
        at += m;
    }
    if lambda > 0.0 {
        a.rows_mut(at, n).copy_from(&(DMatrix::identity(n, n) * lambda.sqrt()));
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.len() < n || svd.singular_values.min() <= 1e-12 * smax {
        return None;
    }
    svd.solve(&r, 0.0).ok()
}

/// Result of brute-force QP enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedQp {
    pub z: DVector<f64>,
    pub objective: f64,
    pub active: Vec<usize>,
}

/// Solves `min ½zᵀWz + wᵀz  s.t.  Ez + e = 0, Cz + c ≥ 0` for strictly
/// convex `W` by trying every subset of inequalities as equalities and
/// keeping the best KKT point. `None` when no subset yields one.
pub fn enumerate_qp(
    w: &DMatrix<f64>,
    lin: &DVector<f64>,
    e: &DMatrix<f64>,
    e_off: &DVector<f64>,
    c: &DMatrix<f64>,
    c_off: &DVector<f64>,
    tol: f64,
) -> Option<EnumeratedQp> {
    let n = w.nrows();
    let (me, mi) = (e.nrows(), c.nrows());
    let mut best: Option<EnumeratedQp> = None;
    for mask in 0u32..(1 << mi) {
        let act: Vec<usize> = (0..mi).filter(|k| mask & (1 << k) != 0).collect();
        let m = me + act.len();
        if m > n {
            continue;
        }
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        for r in 0..me {
            a.set_row(r, &e.row(r));
            b[r] = -e_off[r];
        }
        for (r, &k) in act.iter().enumerate() {
            a.set_row(me + r, &c.row(k));
            b[me + r] = -c_off[k];
        }
        // [W −Aᵀ; A 0] [z; y] = [−w; b]
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(w);
        kkt.view_mut((0, n), (n, m)).copy_from(&(-a.transpose()));
        kkt.view_mut((n, 0), (m, n)).copy_from(&a);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-lin));
        rhs.rows_mut(n, m).copy_from(&b);
        let svd = kkt.svd(true, true);
        if svd.singular_values.min() <= 1e-10 * svd.singular_values.max() {
            continue;
        }
        let Ok(sol) = svd.solve(&rhs, 0.0) else { continue };
        let z = sol.rows(0, n).into_owned();
        let y = sol.rows(n, m).into_owned();
        let primal_ok = (0..mi).all(|k| (c.row(k) * &z)[0] + c_off[k] >= -tol);
        let dual_ok = (0..act.len()).all(|r| y[me + r] >= -tol);
        if !(primal_ok && dual_ok) {
            continue;
        }
        let objective = 0.5 * z.dot(&(w * &z)) + lin.dot(&z);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(EnumeratedQp { z, objective, active: act });
        }
    }
    best
}

fn link_dirs(model: &RobotModel, q: &[f64]) -> Vec<[f64; 3]> {
    match model.geometry {
        Geometry::Planar => {
            let mut a = 0.0;
            q.iter()
                .map(|qi| {
                    a += qi;
                    [a.cos(), a.sin(), 0.0]
                })
                .collect()
        }
        Geometry::Spatial3R => {
            let along = |yaw: f64, pitch: f64| [yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), -pitch.sin()];
            vec![[0.0, 0.0, 1.0], along(q[0], q[1]), along(q[0], q[1] + q[2])]
        }
    }
}

/// Centres of mass of every link followed by link directions, flattened.
fn com_and_dirs(model: &RobotModel, q: &[f64]) -> Vec<f64> {
    let frac = match model.mass_model {
        MassModel::PointMass => 1.0,
        MassModel::UniformRod => 0.5,
    };
    let dirs = link_dirs(model, q);
    let mut tip = [0.0; 3];
    let mut com = Vec::new();
    for (u, l) in dirs.iter().zip(&model.link_lengths) {
        for k in 0..3 {
            com.push(tip[k] + frac * l * u[k]);
            tip[k] += l * u[k];
        }
    }
    com.extend(dirs.iter().flatten());
    com
}

/// End-effector position.
pub fn end_effector(model: &RobotModel, q: &[f64]) -> [f64; 3] {
    let mut tip = [0.0; 3];
    for (u, l) in link_dirs(model, q).iter().zip(&model.link_lengths) {
        for k in 0..3 {
            tip[k] += l * u[k];
        }
    }
    tip
}

/// Kinetic energy matrix from the Lagrangian
/// `T = ½ Σ m_k |ṗ_k|² + ½ Σ I_k |u̇_k|² + ½ Σ a_i q̇_i²`;
/// for a thin rod `ωᵀI ω = I |u̇|²`.
pub fn mass_matrix(model: &RobotModel, q: &[f64]) -> DMatrix<f64> {
    let n = q.len();
    let j = fd_jacobian(|y| com_and_dirs(model, y), q, 1e-3);
    let mut m = DMatrix::from_diagonal(&DVector::from_column_slice(&model.armature));
    for k in 0..n {
        let jp = j.rows(3 * k, 3);
        m += jp.transpose() * jp * model.masses[k];
        if model.mass_model == MassModel::UniformRod {
            let ju = j.rows(3 * (n + k), 3);
            m += ju.transpose() * ju * model.rod_inertias[k];
        }
    }
    m
}

fn potential(model: &RobotModel, q: &[f64]) -> f64 {
    let p = com_and_dirs(model, q);
    -(0..q.len())
        .map(|k| model.masses[k] * (0..3).map(|r| model.gravity[r] * p[3 * k + r]).sum::<f64>())
        .sum::<f64>()
}

/// Bias forces `h = Ṁq̇ − ∂T/∂q + ∂V/∂q` from the Euler–Lagrange equations.
pub fn bias_forces(model: &RobotModel, q: &[f64], qd: &[f64]) -> DVector<f64> {
    let n = q.len();
    let v = DVector::from_column_slice(qd);
    let flat = |y: &[f64]| mass_matrix(model, y).as_slice().to_vec();
    let mut mdot = DMatrix::zeros(n, n);
    for l in 0..n {
        mdot += DMatrix::from_column_slice(n, n, &diff(&flat, q, l, 1e-3)) * qd[l];
    }
    let kinetic = |y: &[f64]| vec![0.5 * v.dot(&(mass_matrix(model, y) * &v))];
    let dv = |y: &[f64]| vec![potential(model, y)];
    let mut h = mdot * &v;
    for i in 0..n {
        h[i] += diff(&dv, q, i, 1e-3)[0] - diff(&kinetic, q, i, 1e-3)[0];
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_metric_at_equator_is_identity() {
        let g = metric(&Chart::SphereSpherical, &[std::f64::consts::FRAC_PI_2, 0.0]);
        assert!((g - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn enumeration_finds_a_bound() {
        // min ½‖z‖² − z₀  s.t.  0.5 − z₀ ≥ 0
        let w = DMatrix::identity(2, 2);
        let lin = DVector::from_vec(vec![-1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]);
        let r = enumerate_qp(
            &w,
            &lin,
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &c,
            &DVector::from_vec(vec![0.5]),
            1e-12,
        )
        .unwrap();
        assert!((r.z[0] - 0.5).abs() < 1e-12);
        assert_eq!(r.active, vec![0]);
    }

    #[test]
    fn wls_rejects_rank_deficiency() {
        let j = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let t = vec![(j, DVector::from_vec(vec![1.0]), DMatrix::identity(1, 1))];
        assert!(stacked_wls(&t, 2, 0.0).is_none());
        assert!(stacked_wls(&t, 2, 1e-3).is_some());
    }

    #[test]
    fn pendulum_mass_and_gravity() {
        let m = RobotModel::planar(vec![1.0], vec![2.0]).unwrap();
        let mm = mass_matrix(&m, &[0.3]);
        assert!((mm[(0, 0)] - 2.0).abs() < 1e-9);
        // gravity along −y: h = m g l cos q
        let h = bias_forces(&m, &[0.3], &[0.0]);
        assert!((h[0] - 2.0 * 9.81 * 0.3f64.cos()).abs() < 1e-8);
    }
}
