//! Coordinate charts of the built-in Riemannian manifolds.
//!
//! A [`Chart`] knows its dimension and open coordinate domain, evaluates the
//! metric tensor and Levi-Civita Christoffel symbols in closed form, and (for
//! embedded manifolds) maps between chart coordinates and the ambient space.

use alloc::vec;
use alloc::vec::Vec;
use core::convert::Infallible;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::real::{jet, Real};

/// Distance kept from the poles by the spherical chart's θ domain.
pub const POLE_MARGIN: f64 = 1e-6;

/// Built-in charts.
#[derive(Clone, Debug, PartialEq)]
pub enum Chart {
    /// Cartesian coordinates on ℝ^d with the flat metric.
    Euclidean { dim: usize },
    /// Unit sphere S² in spherical coordinates (θ, φ), θ the polar angle from +z.
    SphereSpherical,
    /// Unit sphere S² in stereographic coordinates projected from the north pole.
    SphereStereographic,
    /// Half-line d > 0 with metric `1 + beta·exp(-d/sigma)`.
    HalfLine { beta: f64, sigma: f64 },
}

/// Christoffel symbols `Γ^k_ij` stored as a dense d×d×d array.
#[derive(Clone, Debug, PartialEq)]
pub struct ChristoffelSymbols {
    dim: usize,
    data: Vec<f64>,
}

impl ChristoffelSymbols {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.dim + i) * self.dim + j]
    }

    /// Sets `Γ^k_ij` and `Γ^k_ji` together so lower-index symmetry always holds.
    pub fn set_symmetric(&mut self, k: usize, i: usize, j: usize, value: f64) {
        let d = self.dim;
        self.data[(k * d + i) * d + j] = value;
        self.data[(k * d + j) * d + i] = value;
    }

    /// `Ξ ẋ`: component k is `Σ_ij Γ^k_ij v^i v^j`.
    pub fn contract(&self, v: &DVector<f64>) -> DVector<f64> {
        let d = self.dim;
        DVector::from_fn(d, |k, _| {
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    acc += self.get(k, i, j) * v[i] * v[j];
                }
            }
            acc
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Chart {
    pub fn dim(&self) -> usize {
        match self {
            Chart::Euclidean { dim } => *dim,
            Chart::SphereSpherical | Chart::SphereStereographic => 2,
            Chart::HalfLine { .. } => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Chart::Euclidean { .. } => "euclidean",
            Chart::SphereSpherical => "sphere_spherical",
            Chart::SphereStereographic => "sphere_stereographic",
            Chart::HalfLine { .. } => "half_line",
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self, Chart::SphereSpherical | Chart::SphereStereographic)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Chart::Euclidean { dim } if *dim == 0 => {
                Err(Error::InvalidParameter("euclidean chart dimension must be positive".into()))
            }
            Chart::HalfLine { beta, sigma } if !(*beta >= 0.0 && *sigma > 0.0) => Err(
                Error::InvalidParameter("half-line metric needs beta >= 0 and sigma > 0".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Open interval bounds per coordinate (infinite where unbounded).
    pub fn domain(&self) -> Vec<(f64, f64)> {
        match self {
            Chart::Euclidean { dim } => vec![(f64::NEG_INFINITY, f64::INFINITY); *dim],
            Chart::SphereSpherical => vec![
                (POLE_MARGIN, core::f64::consts::PI - POLE_MARGIN),
                (f64::NEG_INFINITY, f64::INFINITY),
            ],
            Chart::SphereStereographic => vec![(f64::NEG_INFINITY, f64::INFINITY); 2],
            Chart::HalfLine { .. } => vec![(0.0, f64::INFINITY)],
        }
    }

    /// Checks dimension, finiteness and the open domain.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim("chart point", self.dim(), x.len()));
        }
        for (i, (&v, (lo, hi))) in x.iter().zip(self.domain()).enumerate() {
            if !(v > lo && v < hi) {
                return Err(Error::DomainViolation {
                    chart: self.name(),
                    coordinate: i,
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.check_point(x).is_ok()
    }

    /// Metric tensor `g_ij(x)`.
    pub fn metric_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x.as_slice())?;
        Ok(match self {
            Chart::Euclidean { dim } => DMatrix::identity(*dim, *dim),
            Chart::SphereSpherical => {
                let s = libm::sin(x[0]);
                DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, s * s]))
            }
            Chart::SphereStereographic => {
                let c = 2.0 / (1.0 + x.norm_squared());
                DMatrix::identity(2, 2) * (c * c)
            }
            Chart::HalfLine { beta, sigma } => {
                DMatrix::from_element(1, 1, 1.0 + beta * libm::exp(-x[0] / sigma))
            }
        })
    }

    /// Christoffel symbols of the Levi-Civita connection, closed form per chart.
    pub fn christoffel_at(&self, x: &DVector<f64>) -> Result<ChristoffelSymbols> {
        self.check_point(x.as_slice())?;
        let mut g = ChristoffelSymbols::zeros(self.dim());
        match self {
            Chart::Euclidean { .. } => {}
            Chart::SphereSpherical => {
                let (s, c) = (libm::sin(x[0]), libm::cos(x[0]));
                if s.abs() < f64::EPSILON {
                    return Err(Error::MetricInversion);
                }
                g.set_symmetric(0, 1, 1, -s * c);
                g.set_symmetric(1, 0, 1, c / s);
            }
            Chart::SphereStereographic => {
                // Conformal metric e^{2f} δ with f = ln 2 - ln(1 + |u|²).
                let den = 1.0 + x.norm_squared();
                let df = [-2.0 * x[0] / den, -2.0 * x[1] / den];
                for k in 0..2 {
                    for i in 0..2 {
                        for j in i..2 {
                            let mut v = 0.0;
                            if i == k {
                                v += df[j];
                            }
                            if j == k {
                                v += df[i];
                            }
                            if i == j {
                                v -= df[k];
                            }
                            g.set_symmetric(k, i, j, v);
                        }
                    }
                }
            }
            Chart::HalfLine { beta, sigma } => {
                let e = beta * libm::exp(-x[0] / sigma);
                g.set_symmetric(0, 0, 0, 0.5 * (-e / sigma) / (1.0 + e));
            }
        }
        Ok(g)
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            Chart::Euclidean { dim } => *dim,
            Chart::SphereSpherical | Chart::SphereStereographic => 3,
            Chart::HalfLine { .. } => 1,
        }
    }

    /// Chart-to-ambient map, generic over the scalar type. No domain check.
    pub fn embed_generic<T: Real>(&self, x: &[T]) -> Vec<T> {
        match self {
            Chart::Euclidean { .. } | Chart::HalfLine { .. } => x.to_vec(),
            Chart::SphereSpherical => {
                let (st, ct) = (x[0].sin(), x[0].cos());
                vec![st * x[1].cos(), st * x[1].sin(), ct]
            }
            Chart::SphereStereographic => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let den = r2 + T::one();
                vec![
                    T::cst(2.0) * x[0] / den,
                    T::cst(2.0) * x[1] / den,
                    (r2 - T::one()) / den,
                ]
            }
        }
    }

    pub fn embed(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x.as_slice())?;
        Ok(DVector::from_vec(self.embed_generic(x.as_slice())))
    }

    /// Jacobian of the embedding, `D × d`.
    pub fn embedding_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x.as_slice())?;
        let zeros = vec![0.0; x.len()];
        let j = jet(x.as_slice(), &zeros, |h| Ok::<_, Infallible>(self.embed_generic(h)))
            .unwrap_or_else(|e| match e {});
        Ok(j.jacobian)
    }

    /// Ambient-to-chart retraction, generic over the scalar type.
    ///
    /// For S² this is the radial projection `p/‖p‖` followed by the chart
    /// inverse; both sphere charts are written in scale-invariant form so the
    /// normalisation never has to be carried out explicitly.
    pub fn retract_generic<T: Real>(&self, p: &[T]) -> Result<Vec<T>> {
        if p.len() != self.embedding_dim() {
            return Err(Error::dim("ambient point", self.embedding_dim(), p.len()));
        }
        if p.iter().any(|v| !v.re().is_finite()) {
            return Err(Error::NonFinite("retraction input"));
        }
        let x = match self {
            Chart::Euclidean { .. } | Chart::HalfLine { .. } => p.to_vec(),
            Chart::SphereSpherical => {
                let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
                if rho.re() == 0.0 {
                    return Err(Error::ChartSingularity(self.name()));
                }
                vec![rho.atan2(p[2]), p[1].atan2(p[0])]
            }
            Chart::SphereStereographic => {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                let den = r - p[2];
                if r.re() == 0.0 || den.re() <= r.re() * 1e-12 {
                    return Err(Error::ChartSingularity(self.name()));
                }
                vec![p[0] / den, p[1] / den]
            }
        };
        let primal: Vec<f64> = x.iter().map(|v| v.re()).collect();
        self.check_point(&primal)?;
        Ok(x)
    }

    pub fn retract(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.retract_generic(p.as_slice()).map(DVector::from_vec)
    }

    /// Re-expresses a state `(x, v)` of this chart in another chart of the
    /// same embedded manifold, going through the ambient point and velocity.
    pub fn transfer_state(
        &self,
        target: &Chart,
        x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        if self.embedding_dim() != target.embedding_dim()
            || self.is_sphere() != target.is_sphere()
        {
            return Err(Error::InvalidParameter(
                "charts do not describe the same embedded manifold".into(),
            ));
        }
        self.check_point(x.as_slice())?;
        let e = jet(x.as_slice(), v.as_slice(), |h| {
            Ok::<_, Infallible>(self.embed_generic(h))
        })
        .unwrap_or_else(|e| match e {});
        let pd = &e.jacobian * v;
        let r = jet(e.value.as_slice(), pd.as_slice(), |h| target.retract_generic(h))?;
        let xd = &r.jacobian * pd;
        Ok((r.value, xd))
    }
}
