use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::manifolds::Chart;
use crate::real::{jet, Jet, Real};
use crate::robot::RobotModel;

/// A user-defined map with hand-supplied derivatives.
pub trait CustomMap: Send + Sync {
    fn source_dim(&self) -> usize;
    fn target_dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn jacobian_dot(&self, x: &DVector<f64>, xd: &DVector<f64>) -> DMatrix<f64>;
}

/// Smooth map from a parent chart into a task chart.
#[derive(Clone)]
pub enum TaskMap {
    /// Same manifold point; a chart transition when the two charts differ.
    Identity,
    /// `x ↦ A x + c`.
    Linear { matrix: DMatrix<f64>, offset: DVector<f64> },
    /// Joint space to end-effector position.
    ForwardKinematics(RobotModel),
    /// ℝ³ to S²: radial projection of `x − center` onto the unit sphere.
    SphereRetraction { center: [f64; 3] },
    /// ℝᵏ to ℝ: `‖x − center‖`.
    RadialDistance { center: Vec<f64> },
    /// ℝᵏ to ℝ⁺: `‖x − center‖ − radius`.
    BallDistance { center: Vec<f64>, radius: f64 },
    /// S² to ℝ⁺: great-circle distance to `center` minus `radius` (radians).
    GeodesicDistance { center: [f64; 3], radius: f64 },
    /// Stages applied in order; each stage carries the chart it maps into.
    Composed(Vec<(TaskMap, Chart)>),
    Custom(Arc<dyn CustomMap>),
}

impl fmt::Debug for TaskMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskMap::Identity => f.write_str("Identity"),
            TaskMap::Linear { matrix, offset } => f
                .debug_struct("Linear")
                .field("matrix", matrix)
                .field("offset", offset)
                .finish(),
            TaskMap::ForwardKinematics(m) => f.debug_tuple("ForwardKinematics").field(&m.geometry).finish(),
            TaskMap::SphereRetraction { center } => {
                f.debug_struct("SphereRetraction").field("center", center).finish()
            }
            TaskMap::RadialDistance { center } => f.debug_struct("RadialDistance").field("center", center).finish(),
            TaskMap::BallDistance { center, radius } => f
                .debug_struct("BallDistance")
                .field("center", center)
                .field("radius", radius)
                .finish(),
            TaskMap::GeodesicDistance { center, radius } => f
                .debug_struct("GeodesicDistance")
                .field("center", center)
                .field("radius", radius)
                .finish(),
            TaskMap::Composed(stages) => f.debug_tuple("Composed").field(stages).finish(),
            TaskMap::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl PartialEq for TaskMap {
    fn eq(&self, other: &Self) -> bool {
        use TaskMap::*;
        match (self, other) {
            (Identity, Identity) => true,
            (Linear { matrix: a, offset: b }, Linear { matrix: c, offset: d }) => a == c && b == d,
            (ForwardKinematics(a), ForwardKinematics(b)) => a == b,
            (SphereRetraction { center: a }, SphereRetraction { center: b }) => a == b,
            (RadialDistance { center: a }, RadialDistance { center: b }) => a == b,
            (BallDistance { center: a, radius: r }, BallDistance { center: b, radius: s }) => a == b && r == s,
            (GeodesicDistance { center: a, radius: r }, GeodesicDistance { center: b, radius: s }) => {
                a == b && r == s
            }
            (Composed(a), Composed(b)) => a == b,
            (Custom(a), Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

fn euclid_dim(chart: &Chart) -> Option<usize> {
    match chart {
        Chart::Euclidean { dim } => Some(*dim),
        _ => None,
    }
}

fn norm<T: Real>(v: &[T]) -> T {
    let mut acc = T::zero();
    for &x in v {
        acc += x * x;
    }
    acc.sqrt()
}

impl TaskMap {
    /// Checks that the map is well defined between `source` and `target`.
    pub fn validate(&self, source: &Chart, target: &Chart) -> Result<()> {
        let need = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter(msg.into()))
            }
        };
        match self {
            TaskMap::Identity => need(
                source == target || (source.is_sphere() && target.is_sphere()),
                "identity map needs matching charts of one manifold",
            ),
            TaskMap::Linear { matrix, offset } => {
                if matrix.ncols() != source.dim() {
                    return Err(Error::dim("linear map columns", source.dim(), matrix.ncols()));
                }
                if matrix.nrows() != target.dim() || offset.len() != target.dim() {
                    return Err(Error::dim("linear map rows", target.dim(), matrix.nrows()));
                }
                need(euclid_dim(source).is_some(), "linear map needs a Euclidean source")
            }
            TaskMap::ForwardKinematics(model) => {
                model.validate()?;
                need(
                    euclid_dim(source) == Some(model.dof()),
                    "forward kinematics needs the joint-space Euclidean chart as source",
                )?;
                need(
                    euclid_dim(target) == Some(model.task_dim()),
                    "forward kinematics target must be Euclidean of the task dimension",
                )
            }
            TaskMap::SphereRetraction { .. } => {
                need(euclid_dim(source) == Some(3), "sphere retraction needs an ℝ³ source")?;
                need(target.is_sphere(), "sphere retraction needs a sphere chart target")
            }
            TaskMap::RadialDistance { center } => {
                need(euclid_dim(source) == Some(center.len()), "radial distance center dimension")?;
                need(target.dim() == 1, "radial distance maps into a 1-D chart")
            }
            TaskMap::BallDistance { center, radius } => {
                need(euclid_dim(source) == Some(center.len()), "ball distance center dimension")?;
                need(*radius >= 0.0, "obstacle radius must be >= 0")?;
                need(target.dim() == 1, "ball distance maps into a 1-D chart")
            }
            TaskMap::GeodesicDistance { center, radius } => {
                need(source.is_sphere(), "geodesic distance needs a sphere chart source")?;
                let n = libm::sqrt(center.iter().map(|c| c * c).sum::<f64>());
                need((n - 1.0).abs() < 1e-9, "geodesic obstacle center must be a unit vector")?;
                need(*radius >= 0.0, "obstacle radius must be >= 0")?;
                need(target.dim() == 1, "geodesic distance maps into a 1-D chart")
            }
            TaskMap::Composed(stages) => {
                let mut src = source;
                for (map, chart) in stages {
                    map.validate(src, chart)?;
                    src = chart;
                }
                need(src == target, "last composed stage must end in the node chart")
            }
            TaskMap::Custom(m) => {
                if m.source_dim() != source.dim() {
                    return Err(Error::dim("custom map source", source.dim(), m.source_dim()));
                }
                if m.target_dim() != target.dim() {
                    return Err(Error::dim("custom map target", target.dim(), m.target_dim()));
                }
                Ok(())
            }
        }
    }

    /// Evaluates the map on generic scalars (no target-domain check).
    pub fn apply_generic<T: Real>(&self, source: &Chart, target: &Chart, x: &[T]) -> Result<Vec<T>> {
        Ok(match self {
            TaskMap::Identity => {
                if source == target {
                    x.to_vec()
                } else {
                    target.retract_generic(&source.embed_generic(x))?
                }
            }
            TaskMap::Linear { matrix, offset } => (0..matrix.nrows())
                .map(|i| {
                    let mut acc = T::cst(offset[i]);
                    for (j, &xj) in x.iter().enumerate() {
                        acc += T::cst(matrix[(i, j)]) * xj;
                    }
                    acc
                })
                .collect(),
            TaskMap::ForwardKinematics(model) => model.ee_generic(x),
            TaskMap::SphereRetraction { center } => {
                let rel: Vec<T> = x.iter().zip(center).map(|(&a, &c)| a - T::cst(c)).collect();
                target.retract_generic(&rel)?
            }
            TaskMap::RadialDistance { center } => {
                let rel: Vec<T> = x.iter().zip(center).map(|(&a, &c)| a - T::cst(c)).collect();
                vec![norm(&rel)]
            }
            TaskMap::BallDistance { center, radius } => {
                let rel: Vec<T> = x.iter().zip(center).map(|(&a, &c)| a - T::cst(c)).collect();
                vec![norm(&rel) - T::cst(*radius)]
            }
            TaskMap::GeodesicDistance { center, radius } => {
                let p = source.embed_generic(x);
                let c: [T; 3] = [T::cst(center[0]), T::cst(center[1]), T::cst(center[2])];
                let cross = [
                    p[1] * c[2] - p[2] * c[1],
                    p[2] * c[0] - p[0] * c[2],
                    p[0] * c[1] - p[1] * c[0],
                ];
                let dot = p[0] * c[0] + p[1] * c[1] + p[2] * c[2];
                vec![norm(&cross).atan2(dot) - T::cst(*radius)]
            }
            TaskMap::Composed(stages) => {
                let mut cur = x.to_vec();
                let mut src = source;
                for (map, chart) in stages {
                    cur = map.apply_generic(src, chart, &cur)?;
                    src = chart;
                }
                cur
            }
            TaskMap::Custom(_) => {
                return Err(Error::InvalidParameter(
                    "custom maps are evaluated through their own derivatives".into(),
                ))
            }
        })
    }

    /// Value, Jacobian and `J̇` at the parent state, with the value checked
    /// against the target chart's domain.
    pub fn eval(&self, source: &Chart, target: &Chart, x: &DVector<f64>, xd: &DVector<f64>) -> Result<Jet> {
        if x.len() != source.dim() || xd.len() != source.dim() {
            return Err(Error::dim("map input", source.dim(), x.len()));
        }
        let out = match self {
            TaskMap::Custom(m) => Jet {
                value: m.value(x),
                jacobian: m.jacobian(x),
                jacobian_dot: m.jacobian_dot(x, xd),
            },
            _ => jet(x.as_slice(), xd.as_slice(), |h| self.apply_generic(source, target, h))?,
        };
        if out.value.iter().chain(out.jacobian.iter()).chain(out.jacobian_dot.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("task map"));
        }
        target.check_point(out.value.as_slice())?;
        Ok(out)
    }

    pub fn value(&self, source: &Chart, target: &Chart, x: &DVector<f64>) -> Result<DVector<f64>> {
        let out = match self {
            TaskMap::Custom(m) => m.value(x),
            _ => DVector::from_vec(self.apply_generic(source, target, x.as_slice())?),
        };
        target.check_point(out.as_slice())?;
        Ok(out)
    }
}
