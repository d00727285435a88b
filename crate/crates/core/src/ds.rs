//! Second-order geometric dynamical systems on a chart:
//! `ẍ = −G⁻¹(∇φ + D ẋ) − Ξ ẋ`.
//!
//! Dissipation is stored with both indices down (a bilinear form on
//! velocities), so `−G⁻¹ D ẋ` is the acceleration it produces and
//! `ẋᵀ D ẋ ≥ 0` is the power it removes in every chart.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::manifolds::{Chart, ChristoffelSymbols};

type ScalarFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// User-supplied potential; its gradient falls back to central differences.
#[derive(Clone)]
pub struct CustomPotential(pub Arc<ScalarFn>);

impl CustomPotential {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Self(Arc::new(f))
    }
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomPotential(..)")
    }
}

impl PartialEq for CustomPotential {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// Potential energy φ on a chart.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    Zero,
    /// `½ k ‖x − x*‖²` in chart coordinates.
    Quadratic { target: DVector<f64>, stiffness: f64 },
    /// `½ k d_geo(p, p*)²` on the unit sphere; `target` is the ambient unit vector p*.
    Geodesic { target: [f64; 3], stiffness: f64 },
    /// Inverse-square barrier on a 1-D distance coordinate, truncated at `cutoff`
    /// with value and slope both reaching zero there.
    Barrier { alpha: f64, cutoff: f64 },
    /// Weighted sum of potentials.
    Sum(Vec<(f64, Potential)>),
    Custom(CustomPotential),
}

impl Potential {
    pub fn validate(&self, chart: &Chart) -> Result<()> {
        match self {
            Potential::Zero | Potential::Custom(_) => Ok(()),
            Potential::Quadratic { target, stiffness } => {
                if target.len() != chart.dim() {
                    return Err(Error::dim("quadratic potential target", chart.dim(), target.len()));
                }
                if !(*stiffness >= 0.0) {
                    return Err(Error::InvalidParameter("stiffness must be >= 0".into()));
                }
                Ok(())
            }
            Potential::Geodesic { target, stiffness } => {
                if !chart.is_sphere() {
                    return Err(Error::InvalidParameter(
                        "geodesic potential requires a sphere chart".into(),
                    ));
                }
                let n = libm::sqrt(target.iter().map(|t| t * t).sum::<f64>());
                if (n - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter("geodesic target must be a unit vector".into()));
                }
                if !(*stiffness >= 0.0) {
                    return Err(Error::InvalidParameter("stiffness must be >= 0".into()));
                }
                Ok(())
            }
            Potential::Barrier { alpha, cutoff } => {
                if chart.dim() != 1 {
                    return Err(Error::dim("barrier potential chart", 1, chart.dim()));
                }
                if !(*alpha > 0.0 && *cutoff > 0.0) {
                    return Err(Error::InvalidParameter("barrier needs alpha > 0 and cutoff > 0".into()));
                }
                Ok(())
            }
            Potential::Sum(terms) => terms.iter().try_for_each(|(_, p)| p.validate(chart)),
        }
    }

    /// True when the potential is a scalar function on the manifold rather than
    /// on one particular chart's coordinates.
    pub fn is_chart_invariant(&self) -> bool {
        match self {
            Potential::Zero | Potential::Geodesic { .. } => true,
            Potential::Sum(t) => t.iter().all(|(_, p)| p.is_chart_invariant()),
            _ => false,
        }
    }

    pub fn value(&self, chart: &Chart, x: &DVector<f64>) -> Result<f64> {
        Ok(match self {
            Potential::Zero => 0.0,
            Potential::Quadratic { target, stiffness } => 0.5 * stiffness * (x - target).norm_squared(),
            Potential::Geodesic { target, stiffness } => {
                let (theta, _) = sphere_angle(chart, x, target)?;
                0.5 * stiffness * theta * theta
            }
            Potential::Barrier { alpha, cutoff } => {
                let d = x[0];
                if !(d > 0.0) {
                    return Err(Error::SingularPotential("barrier evaluated at non-positive distance"));
                }
                if d >= *cutoff {
                    0.0
                } else {
                    let c = *cutoff;
                    alpha * (1.0 / (d * d) - 1.0 / (c * c) + 2.0 * (d - c) / (c * c * c))
                }
            }
            Potential::Sum(terms) => {
                let mut acc = 0.0;
                for (w, p) in terms {
                    acc += w * p.value(chart, x)?;
                }
                acc
            }
            Potential::Custom(f) => (f.0)(x),
        })
    }

    /// Distance to the minimiser for attractor potentials: Euclidean in
    /// chart coordinates for `Quadratic`, great-circle angle for `Geodesic`.
    /// Sums report their first attractor term.
    pub fn target_distance(&self, chart: &Chart, x: &DVector<f64>) -> Option<f64> {
        match self {
            Potential::Quadratic { target, .. } => Some((x - target).norm()),
            Potential::Geodesic { target, .. } => sphere_angle(chart, x, target).ok().map(|(t, _)| t),
            Potential::Sum(terms) => terms.iter().find_map(|(_, p)| p.target_distance(chart, x)),
            _ => None,
        }
    }

    /// Coordinate gradient `∂_a φ` (a covector).
    pub fn gradient(&self, chart: &Chart, x: &DVector<f64>) -> Result<DVector<f64>> {
        let d = x.len();
        Ok(match self {
            Potential::Zero => DVector::zeros(d),
            Potential::Quadratic { target, stiffness } => (x - target) * *stiffness,
            Potential::Geodesic { target, stiffness } => {
                let (theta, sin_theta) = sphere_angle(chart, x, target)?;
                let ratio = if sin_theta < 1e-12 {
                    if theta > 1.0 {
                        return Err(Error::SingularPotential("antipodal to the geodesic attractor"));
                    }
                    1.0
                } else {
                    theta / sin_theta
                };
                // Riemannian gradient of ½θ² is −log_p(p*); in coordinates this is
                // Eᵀ(−θ/sinθ · p*) because Eᵀp = 0.
                let e = chart.embedding_jacobian(x)?;
                let t = DVector::from_column_slice(target);
                e.transpose() * t * (-stiffness * ratio)
            }
            Potential::Barrier { alpha, cutoff } => {
                let dist = x[0];
                if !(dist > 0.0) {
                    return Err(Error::SingularPotential("barrier evaluated at non-positive distance"));
                }
                let c = *cutoff;
                let g = if dist >= c {
                    0.0
                } else {
                    alpha * (-2.0 / (dist * dist * dist) + 2.0 / (c * c * c))
                };
                DVector::from_element(1, g)
            }
            Potential::Sum(terms) => {
                let mut acc = DVector::zeros(d);
                for (w, p) in terms {
                    acc += p.gradient(chart, x)? * *w;
                }
                acc
            }
            Potential::Custom(f) => {
                let mut g = DVector::zeros(d);
                for i in 0..d {
                    let h = 1e-6 * (1.0 + x[i].abs());
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    g[i] = ((f.0)(&xp) - (f.0)(&xm)) / (2.0 * h);
                }
                g
            }
        })
    }
}

/// Angle between the embedded point and `target`, with its sine.
fn sphere_angle(chart: &Chart, x: &DVector<f64>, target: &[f64; 3]) -> Result<(f64, f64)> {
    let p = chart.embed(x)?;
    let t = nalgebra::Vector3::from_column_slice(target);
    let p = nalgebra::Vector3::new(p[0], p[1], p[2]);
    let s = p.cross(&t).norm();
    let c = p.dot(&t);
    Ok((libm::atan2(s, c), s))
}

/// Dissipation bilinear form `D` (indices down).
#[derive(Clone, Debug, PartialEq)]
pub enum Dissipation {
    None,
    /// `D = c·G`, positive definite in every chart.
    MetricProportional { gain: f64 },
    /// `D = c·I` in the chart's coordinates.
    Constant { gain: f64 },
    Sum(Vec<(f64, Dissipation)>),
}

impl Dissipation {
    pub fn validate(&self) -> Result<()> {
        match self {
            Dissipation::None => Ok(()),
            Dissipation::MetricProportional { gain } | Dissipation::Constant { gain } => {
                if *gain >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("damping gain must be >= 0".into()))
                }
            }
            Dissipation::Sum(t) => t.iter().try_for_each(|(w, d)| {
                if *w < 0.0 {
                    return Err(Error::InvalidParameter("dissipation weights must be >= 0".into()));
                }
                d.validate()
            }),
        }
    }

    pub fn is_chart_invariant(&self) -> bool {
        match self {
            Dissipation::None | Dissipation::MetricProportional { .. } => true,
            Dissipation::Constant { .. } => false,
            Dissipation::Sum(t) => t.iter().all(|(_, d)| d.is_chart_invariant()),
        }
    }

    /// Dissipation matrix at a point whose metric is `metric`.
    pub fn matrix(&self, metric: &DMatrix<f64>) -> DMatrix<f64> {
        let d = metric.nrows();
        match self {
            Dissipation::None => DMatrix::zeros(d, d),
            Dissipation::MetricProportional { gain } => metric * *gain,
            Dissipation::Constant { gain } => DMatrix::identity(d, d) * *gain,
            Dissipation::Sum(t) => t
                .iter()
                .fold(DMatrix::zeros(d, d), |acc, (w, dis)| acc + dis.matrix(metric) * *w),
        }
    }
}

/// Position and velocity on a chart.
#[derive(Clone, Debug, PartialEq)]
pub struct DsState {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
}

impl DsState {
    pub fn new(x: DVector<f64>, v: DVector<f64>) -> Self {
        Self { x, v }
    }

    pub fn from_slices(x: &[f64], v: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(x), DVector::from_column_slice(v))
    }
}

/// A potential and a dissipation living on one chart.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrderDS {
    chart: Chart,
    potential: Potential,
    dissipation: Dissipation,
}

impl SecondOrderDS {
    pub fn new(chart: Chart, potential: Potential, dissipation: Dissipation) -> Result<Self> {
        chart.validate()?;
        potential.validate(&chart)?;
        dissipation.validate()?;
        Ok(Self {
            chart,
            potential,
            dissipation,
        })
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn dissipation(&self) -> &Dissipation {
        &self.dissipation
    }

    /// The same system expressed on another chart of the same manifold, when
    /// potential and dissipation do not depend on the chart.
    pub fn in_chart(&self, chart: Chart) -> Result<Self> {
        if !(self.potential.is_chart_invariant() && self.dissipation.is_chart_invariant()) {
            return Err(Error::InvalidParameter(
                "potential or dissipation is tied to its chart coordinates".into(),
            ));
        }
        if chart.is_sphere() != self.chart.is_sphere() || chart.dim() != self.chart.dim() {
            return Err(Error::InvalidParameter("charts describe different manifolds".into()));
        }
        Self::new(chart, self.potential.clone(), self.dissipation.clone())
    }

    fn check_state(&self, s: &DsState) -> Result<()> {
        self.chart.check_point(s.x.as_slice())?;
        if s.v.len() != self.chart.dim() {
            return Err(Error::dim("velocity", self.chart.dim(), s.v.len()));
        }
        Ok(())
    }

    /// `ẍ = −G⁻¹(∇φ + D ẋ) − Ξ ẋ`.
    pub fn geometric_acceleration(&self, s: &DsState) -> Result<DVector<f64>> {
        self.check_state(s)?;
        let g = self.chart.metric_at(&s.x)?;
        let chol = g.clone().cholesky().ok_or(Error::MetricInversion)?;
        let force = self.potential.gradient(&self.chart, &s.x)? + self.dissipation.matrix(&g) * &s.v;
        let gamma = self.chart.christoffel_at(&s.x)?;
        Ok(-chol.solve(&force) - christoffel_term(&gamma, &s.v))
    }

    /// `φ(x) + ½ vᵀ G(x) v`.
    pub fn mechanical_energy(&self, s: &DsState) -> Result<f64> {
        self.check_state(s)?;
        let g = self.chart.metric_at(&s.x)?;
        Ok(self.potential.value(&self.chart, &s.x)? + 0.5 * s.v.dot(&(g * &s.v)))
    }
}

/// `Ξ ẋ` with component k equal to `Σ_ij Γ^k_ij v^i v^j`.
pub fn christoffel_term(gamma: &ChristoffelSymbols, v: &DVector<f64>) -> DVector<f64> {
    gamma.contract(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_4;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn euclid_attractor(damping: f64) -> SecondOrderDS {
        SecondOrderDS::new(
            Chart::Euclidean { dim: 2 },
            Potential::Quadratic {
                target: v(&[0.0, 0.0]),
                stiffness: 1.0,
            },
            Dissipation::Constant { gain: damping },
        )
        .unwrap()
    }

    #[test]
    fn christoffel_term_examples() {
        let gamma = Chart::SphereSpherical.christoffel_at(&v(&[FRAC_PI_4, 0.0])).unwrap();
        assert_eq!(christoffel_term(&gamma, &v(&[0.0, 0.0])), v(&[0.0, 0.0]));
        let out = christoffel_term(&gamma, &v(&[0.0, 1.0]));
        assert!((out[0] + 0.5).abs() < 1e-15);
        assert_eq!(out[1], 0.0);
        let flat = ChristoffelSymbols::zeros(3);
        assert_eq!(christoffel_term(&flat, &v(&[1.0, 2.0, 3.0])), DVector::zeros(3));
    }

    #[test]
    fn euclidean_acceleration_examples() {
        let ds = euclid_attractor(2.0);
        let a = ds.geometric_acceleration(&DsState::from_slices(&[0.0, 0.0], &[0.0, 0.0])).unwrap();
        assert_eq!(a, v(&[0.0, 0.0]));
        let a = ds.geometric_acceleration(&DsState::from_slices(&[1.0, 0.0], &[0.0, 1.0])).unwrap();
        assert!((a - v(&[-1.0, -2.0])).norm() < 1e-15);
    }

    #[test]
    fn sphere_geodesic_acceleration_example() {
        let ds = SecondOrderDS::new(Chart::SphereSpherical, Potential::Zero, Dissipation::None).unwrap();
        let a = ds
            .geometric_acceleration(&DsState::from_slices(&[FRAC_PI_4, 0.0], &[0.0, 1.0]))
            .unwrap();
        assert!((a - v(&[0.5, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn mechanical_energy_examples() {
        let ds = euclid_attractor(1.0);
        assert_eq!(ds.mechanical_energy(&DsState::from_slices(&[0.0, 0.0], &[0.0, 0.0])).unwrap(), 0.0);
        let free = SecondOrderDS::new(Chart::Euclidean { dim: 2 }, Potential::Zero, Dissipation::None).unwrap();
        let e = free.mechanical_energy(&DsState::from_slices(&[0.1, 0.2], &[3.0, 4.0])).unwrap();
        assert!((e - 12.5).abs() < 1e-15);
        let sph = SecondOrderDS::new(Chart::SphereSpherical, Potential::Zero, Dissipation::None).unwrap();
        let e = sph.mechanical_energy(&DsState::from_slices(&[FRAC_PI_4, 0.0], &[0.0, 2.0])).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
    }

    #[test]
    fn geodesic_potential_vanishes_at_target_and_points_downhill() {
        let target = [0.0, 1.0, 0.0];
        let pot = Potential::Geodesic { target, stiffness: 2.0 };
        let c = Chart::SphereSpherical;
        let at = v(&[core::f64::consts::FRAC_PI_2, core::f64::consts::FRAC_PI_2]);
        assert!(pot.value(&c, &at).unwrap() < 1e-28);
        assert!(pot.gradient(&c, &at).unwrap().norm() < 1e-14);
        // Moving φ toward π/2 from below must lower the potential.
        let x = v(&[1.2, 0.9]);
        let g = pot.gradient(&c, &x).unwrap();
        assert!(g[1] < 0.0);
    }

    #[test]
    fn antipodal_geodesic_gradient_is_an_error() {
        let pot = Potential::Geodesic { target: [1.0, 0.0, 0.0], stiffness: 1.0 };
        let x = v(&[core::f64::consts::FRAC_PI_2, core::f64::consts::PI]);
        assert!(matches!(
            pot.gradient(&Chart::SphereSpherical, &x),
            Err(Error::SingularPotential(_))
        ));
    }

    #[test]
    fn barrier_is_c1_at_cutoff() {
        let b = Potential::Barrier { alpha: 0.1, cutoff: 0.3 };
        let c = Chart::HalfLine { beta: 0.0, sigma: 1.0 };
        let below = b.value(&c, &v(&[0.3 - 1e-9])).unwrap();
        assert!(below.abs() < 1e-12);
        let g = b.gradient(&c, &v(&[0.3 - 1e-9])).unwrap();
        assert!(g[0].abs() < 1e-6);
        assert!(b.gradient(&c, &v(&[0.1])).unwrap()[0] < 0.0);
        assert!(b.value(&c, &v(&[0.0])).is_err());
    }

    #[test]
    fn custom_potential_uses_finite_differences() {
        let p = Potential::Custom(CustomPotential::new(|x: &DVector<f64>| x[0] * x[0] * x[1]));
        let g = p.gradient(&Chart::Euclidean { dim: 2 }, &v(&[1.5, -2.0])).unwrap();
        assert!((g - v(&[-6.0, 2.25])).norm() < 1e-6);
    }

    #[test]
    fn validation_rejects_bad_systems() {
        assert!(SecondOrderDS::new(
            Chart::Euclidean { dim: 2 },
            Potential::Geodesic { target: [0.0, 0.0, 1.0], stiffness: 1.0 },
            Dissipation::None
        )
        .is_err());
        assert!(SecondOrderDS::new(
            Chart::Euclidean { dim: 3 },
            Potential::Quadratic { target: v(&[1.0]), stiffness: 1.0 },
            Dissipation::None
        )
        .is_err());
        assert!(SecondOrderDS::new(
            Chart::Euclidean { dim: 1 },
            Potential::Zero,
            Dissipation::Constant { gain: -1.0 }
        )
        .is_err());
    }

    #[test]
    fn rechart_requires_invariant_fields() {
        let ds = euclid_attractor(1.0);
        assert!(ds.in_chart(Chart::SphereSpherical).is_err());
        let s = SecondOrderDS::new(
            Chart::SphereSpherical,
            Potential::Geodesic { target: [1.0, 0.0, 0.0], stiffness: 1.0 },
            Dissipation::MetricProportional { gain: 1.0 },
        )
        .unwrap();
        assert_eq!(s.in_chart(Chart::SphereStereographic).unwrap().chart(), &Chart::SphereStereographic);
    }
}
