use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::ds::{DsState, SecondOrderDS};
use crate::error::{Error, Result};
use crate::manifolds::Chart;
use crate::pbds::map::TaskMap;
use crate::real::Jet;

/// What a task node is for; used for logging and run metrics only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskRole {
    Task,
    Attractor,
    Damping,
    Obstacle,
    Constraint,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodePayload {
    /// A user-defined second-order system on the node chart.
    Leaf(SecondOrderDS),
    /// Sub-tasks whose combined acceleration defines this node's system.
    Internal(Vec<TaskNode>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskNode {
    pub name: String,
    pub map: TaskMap,
    pub chart: Chart,
    /// Task weight `W` (s × s, symmetric PSD).
    pub weight: DMatrix<f64>,
    pub role: TaskRole,
    pub payload: NodePayload,
}

/// How the weighted least-squares combination is regularised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularization {
    /// `λ = 1e-9 · trace(Σ JᵀWJ) / m`.
    Auto,
    Fixed(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Auto
    }
}

impl Regularization {
    pub fn lambda(&self, gram: &DMatrix<f64>) -> f64 {
        match self {
            Regularization::Auto => 1e-9 * gram.trace() / gram.nrows().max(1) as f64,
            Regularization::Fixed(l) => *l,
        }
    }
}

/// One pulled-back task: `J q̈ ≈ b` with weight `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct PullbackTerm {
    pub jacobian: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub weight: DMatrix<f64>,
}

/// Evaluation of one node at the current parent state.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeReport {
    pub name: String,
    pub role: TaskRole,
    pub leaf: bool,
    /// Task-space position and velocity.
    pub state: DsState,
    /// Desired task-space acceleration (leaf system or combined children).
    pub desired_acceleration: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// `J̇ q̇`.
    pub jdot_qd: DVector<f64>,
}

/// Full output of a tree resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolution {
    pub qdd: DVector<f64>,
    /// Nodes directly below the base space, in declaration order.
    pub first_level: Vec<NodeReport>,
    /// Every node, children before their parent.
    pub nodes: Vec<NodeReport>,
}

impl Resolution {
    pub fn node(&self, name: &str) -> Option<&NodeReport> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &NodeReport> {
        self.nodes.iter().filter(|n| n.leaf)
    }
}

impl TaskNode {
    pub fn leaf(name: &str, map: TaskMap, ds: SecondOrderDS, weight: DMatrix<f64>) -> Self {
        Self {
            name: name.into(),
            map,
            chart: ds.chart().clone(),
            weight,
            role: TaskRole::Task,
            payload: NodePayload::Leaf(ds),
        }
    }

    pub fn internal(name: &str, map: TaskMap, chart: Chart, weight: DMatrix<f64>, children: Vec<TaskNode>) -> Self {
        Self {
            name: name.into(),
            map,
            chart,
            weight,
            role: TaskRole::Task,
            payload: NodePayload::Internal(children),
        }
    }

    pub fn with_role(mut self, role: TaskRole) -> Self {
        self.role = role;
        self
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.payload, NodePayload::Leaf(_))
    }

    pub fn children(&self) -> &[TaskNode] {
        match &self.payload {
            NodePayload::Leaf(_) => &[],
            NodePayload::Internal(c) => c,
        }
    }

    /// Checks dimensions, weights and maps of this node and its subtree.
    pub fn validate(&self, parent: &Chart) -> Result<()> {
        let inner = || -> Result<()> {
            self.chart.validate()?;
            self.map.validate(parent, &self.chart)?;
            let s = self.chart.dim();
            if self.weight.nrows() != s || self.weight.ncols() != s {
                return Err(Error::dim("task weight", s, self.weight.nrows()));
            }
            let asym = (&self.weight - self.weight.transpose()).abs().max();
            if asym > 1e-12 {
                return Err(Error::InvalidParameter("task weight must be symmetric".into()));
            }
            let min_eig = self.weight.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-12 {
                return Err(Error::InvalidParameter("task weight must be positive semidefinite".into()));
            }
            match &self.payload {
                NodePayload::Leaf(ds) => {
                    if ds.chart() != &self.chart {
                        return Err(Error::InvalidParameter("leaf system must live on the node chart".into()));
                    }
                    Ok(())
                }
                NodePayload::Internal(children) => {
                    if children.is_empty() {
                        return Err(Error::InvalidParameter("internal node needs at least one child".into()));
                    }
                    children.iter().try_for_each(|c| c.validate(&self.chart))
                }
            }
        };
        inner().map_err(|e| e.at_node(&self.name))
    }

    /// Evaluates the node at the parent state; returns its pulled-back term
    /// and report, collecting leaf reports when asked.
    fn evaluate(
        &self,
        parent: &Chart,
        parent_state: &DsState,
        reg: Regularization,
        collect: &mut Option<&mut Vec<NodeReport>>,
    ) -> Result<(PullbackTerm, NodeReport)> {
        let inner = |collect: &mut Option<&mut Vec<NodeReport>>| -> Result<(PullbackTerm, NodeReport)> {
            let Jet {
                value,
                jacobian,
                jacobian_dot,
            } = self.map.eval(parent, &self.chart, &parent_state.x, &parent_state.v)?;
            let velocity = &jacobian * &parent_state.v;
            let jdot_qd = &jacobian_dot * &parent_state.v;
            let state = DsState::new(value, velocity);
            let desired = match &self.payload {
                NodePayload::Leaf(ds) => ds.geometric_acceleration(&state)?,
                NodePayload::Internal(children) => {
                    let mut terms = Vec::with_capacity(children.len());
                    for child in children {
                        let (term, _) = child.evaluate(&self.chart, &state, reg, collect)?;
                        terms.push(term);
                    }
                    combine_with(&terms, self.chart.dim(), reg)?
                }
            };
            let term = PullbackTerm {
                rhs: &desired - &jdot_qd,
                jacobian: jacobian.clone(),
                weight: self.weight.clone(),
            };
            let report = NodeReport {
                name: self.name.clone(),
                role: self.role,
                leaf: self.is_leaf(),
                state,
                desired_acceleration: desired,
                jacobian,
                jdot_qd,
            };
            if let Some(l) = collect.as_deref_mut() {
                l.push(report.clone());
            }
            Ok((term, report))
        };
        inner(collect).map_err(|e| e.at_node(&self.name))
    }

    /// `(J, b, W)` of this node at the parent state, where
    /// `b = −H⁻¹(∇φ + D J q̇) − J̇ q̇ − Ξ J q̇` for a leaf and
    /// `b = ẍ_node − J̇ q̇` for an internal node whose own acceleration comes
    /// from combining its children.
    pub fn pullback_rhs(&self, parent: &Chart, parent_state: &DsState, reg: Regularization) -> Result<PullbackTerm> {
        self.evaluate(parent, parent_state, reg, &mut None).map(|(t, _)| t)
    }

    /// The system this node's subtree defines on the node chart.
    pub fn task_space_field(&self, reg: Regularization) -> TaskField {
        match &self.payload {
            NodePayload::Leaf(ds) => TaskField::Ds(ds.clone()),
            NodePayload::Internal(children) => TaskField::Tree(PbdsTree {
                base: self.chart.clone(),
                children: children.clone(),
                regularization: reg,
            }),
        }
    }

    /// Depth-first search by name.
    pub fn find(&self, name: &str) -> Option<&TaskNode> {
        if self.name == name {
            return Some(self);
        }
        self.children().iter().find_map(|c| c.find(name))
    }
}

/// `argmin_q̈ Σ ‖J_i q̈ − b_i‖²_{W_i} + λ‖q̈‖²` via the normal equations.
pub fn combine(terms: &[PullbackTerm], base_dim: usize, lambda: f64) -> Result<DVector<f64>> {
    let (gram, rhs) = normal_equations(terms, base_dim)?;
    solve_normal(gram, rhs, lambda)
}

fn combine_with(terms: &[PullbackTerm], base_dim: usize, reg: Regularization) -> Result<DVector<f64>> {
    let (gram, rhs) = normal_equations(terms, base_dim)?;
    let lambda = reg.lambda(&gram);
    solve_normal(gram, rhs, lambda)
}

fn normal_equations(terms: &[PullbackTerm], m: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut gram = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for t in terms {
        let s = t.rhs.len();
        if t.jacobian.ncols() != m {
            return Err(Error::dim("task jacobian columns", m, t.jacobian.ncols()));
        }
        if t.jacobian.nrows() != s {
            return Err(Error::dim("task jacobian rows", s, t.jacobian.nrows()));
        }
        if t.weight.nrows() != s || t.weight.ncols() != s {
            return Err(Error::dim("task weight", s, t.weight.nrows()));
        }
        let jtw = t.jacobian.transpose() * &t.weight;
        gram += &jtw * &t.jacobian;
        rhs += jtw * &t.rhs;
    }
    Ok((gram, rhs))
}

fn solve_normal(mut gram: DMatrix<f64>, rhs: DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter("regularisation must be >= 0".into()));
    }
    let m = gram.nrows();
    if lambda == 0.0 {
        let eig = gram.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || lo <= hi * 1e-12 {
            return Err(Error::SingularGram);
        }
    } else {
        for i in 0..m {
            gram[(i, i)] += lambda;
        }
    }
    let chol = gram.cholesky().ok_or(Error::SingularGram)?;
    Ok(chol.solve(&rhs))
}

/// A tree of task spaces hanging off one base chart.
#[derive(Clone, Debug, PartialEq)]
pub struct PbdsTree {
    pub base: Chart,
    pub children: Vec<TaskNode>,
    pub regularization: Regularization,
}

impl PbdsTree {
    /// Tree over a configuration space of dimension `dof`, validated.
    pub fn new(dof: usize, children: Vec<TaskNode>) -> Result<Self> {
        Self::on_chart(Chart::Euclidean { dim: dof }, children)
    }

    pub fn on_chart(base: Chart, children: Vec<TaskNode>) -> Result<Self> {
        let tree = Self {
            base,
            children,
            regularization: Regularization::Auto,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn with_regularization(mut self, reg: Regularization) -> Self {
        self.regularization = reg;
        self
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.children.is_empty() {
            return Err(Error::InvalidParameter("tree needs at least one task".into()));
        }
        if let Regularization::Fixed(l) = self.regularization {
            if !(l >= 0.0) {
                return Err(Error::InvalidParameter("regularisation must be >= 0".into()));
            }
        }
        self.children.iter().try_for_each(|c| c.validate(&self.base))
    }

    fn check_state(&self, s: &DsState) -> Result<()> {
        self.base.check_point(s.x.as_slice())?;
        if s.v.len() != self.dim() {
            return Err(Error::dim("base velocity", self.dim(), s.v.len()));
        }
        Ok(())
    }

    /// Desired base acceleration `q̈_d`.
    pub fn resolve(&self, base_state: &DsState) -> Result<DVector<f64>> {
        self.check_state(base_state)?;
        let mut terms = Vec::with_capacity(self.children.len());
        for c in &self.children {
            terms.push(c.pullback_rhs(&self.base, base_state, self.regularization)?);
        }
        combine_with(&terms, self.dim(), self.regularization)
    }

    /// Like [`resolve`](Self::resolve) but also returns per-node reports.
    pub fn resolve_detailed(&self, base_state: &DsState) -> Result<Resolution> {
        self.check_state(base_state)?;
        let mut nodes = Vec::new();
        let mut terms = Vec::with_capacity(self.children.len());
        let mut first_level = Vec::with_capacity(self.children.len());
        for c in &self.children {
            let (t, r) = c.evaluate(&self.base, base_state, self.regularization, &mut Some(&mut nodes))?;
            terms.push(t);
            first_level.push(r);
        }
        let qdd = combine_with(&terms, self.dim(), self.regularization)?;
        Ok(Resolution {
            qdd,
            first_level,
            nodes,
        })
    }

    pub fn find(&self, name: &str) -> Option<&TaskNode> {
        self.children.iter().find_map(|c| c.find(name))
    }

    /// Every leaf node, depth first.
    pub fn leaf_nodes(&self) -> Vec<&TaskNode> {
        fn walk<'a>(n: &'a TaskNode, out: &mut Vec<&'a TaskNode>) {
            match &n.payload {
                NodePayload::Leaf(_) => out.push(n),
                NodePayload::Internal(c) => c.iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        self.children.iter().for_each(|c| walk(c, &mut out));
        out
    }
}

/// A second-order system on a task chart: either a single leaf system or a
/// subtree resolved at that chart.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskField {
    Ds(SecondOrderDS),
    Tree(PbdsTree),
}

impl TaskField {
    pub fn chart(&self) -> &Chart {
        match self {
            TaskField::Ds(ds) => ds.chart(),
            TaskField::Tree(t) => &t.base,
        }
    }

    pub fn acceleration(&self, s: &DsState) -> Result<DVector<f64>> {
        match self {
            TaskField::Ds(ds) => ds.geometric_acceleration(s),
            TaskField::Tree(t) => t.resolve(s),
        }
    }

    /// The same system expressed on another chart of the same manifold.
    /// Identity-mapped sphere leaves move along with the base chart.
    pub fn in_chart(&self, chart: Chart) -> Result<TaskField> {
        match self {
            TaskField::Ds(ds) => ds.in_chart(chart).map(TaskField::Ds),
            TaskField::Tree(t) => {
                if chart.is_sphere() != t.base.is_sphere() || chart.dim() != t.base.dim() {
                    return Err(Error::InvalidParameter("charts describe different manifolds".into()));
                }
                let mut children = Vec::with_capacity(t.children.len());
                for c in &t.children {
                    let mut c = c.clone();
                    if let (TaskMap::Identity, NodePayload::Leaf(ds)) = (&c.map, &c.payload) {
                        if c.chart == t.base {
                            let moved = ds.in_chart(chart.clone())?;
                            c.chart = chart.clone();
                            c.payload = NodePayload::Leaf(moved);
                        }
                    }
                    children.push(c);
                }
                let tree = PbdsTree {
                    base: chart,
                    children,
                    regularization: t.regularization,
                };
                tree.validate()?;
                Ok(TaskField::Tree(tree))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ds::{Dissipation, Potential};
    use alloc::vec;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn euclid_leaf(name: &str, map: TaskMap, dim: usize, damping: f64) -> TaskNode {
        let ds = SecondOrderDS::new(
            Chart::Euclidean { dim },
            Potential::Quadratic {
                target: DVector::zeros(dim),
                stiffness: 1.0,
            },
            Dissipation::Constant { gain: damping },
        )
        .unwrap();
        TaskNode::leaf(name, map, ds, DMatrix::identity(dim, dim))
    }

    #[test]
    fn identity_leaf_reduces_to_the_leaf_system() {
        let node = euclid_leaf("a", TaskMap::Identity, 2, 0.0);
        let t = node
            .pullback_rhs(&Chart::Euclidean { dim: 2 }, &DsState::from_slices(&[1.0, 0.0], &[0.0, 0.0]), Regularization::Auto)
            .unwrap();
        assert_eq!(t.jacobian, DMatrix::identity(2, 2));
        assert_eq!(t.rhs, v(&[-1.0, 0.0]));
        assert_eq!(t.weight, DMatrix::identity(2, 2));
    }

    #[test]
    fn linear_leaf_example() {
        let map = TaskMap::Linear {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]),
            offset: DVector::zeros(2),
        };
        let node = euclid_leaf("a", map, 2, 0.0);
        let t = node
            .pullback_rhs(&Chart::Euclidean { dim: 2 }, &DsState::from_slices(&[1.0, 0.0], &[0.0, 0.0]), Regularization::Auto)
            .unwrap();
        assert_eq!(t.jacobian, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]));
        assert_eq!(t.rhs, v(&[-1.0, -1.0]));
    }

    #[test]
    fn combine_identity_and_duplicates() {
        let b = v(&[0.3, -2.0]);
        let t = PullbackTerm {
            jacobian: DMatrix::identity(2, 2),
            rhs: b.clone(),
            weight: DMatrix::identity(2, 2),
        };
        assert!((combine(&[t.clone()], 2, 0.0).unwrap() - &b).norm() < 1e-15);
        assert!((combine(&[t.clone(), t], 2, 0.0).unwrap() - &b).norm() < 1e-15);
    }

    #[test]
    fn combine_singular_gram_is_an_error() {
        let t = PullbackTerm {
            jacobian: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            rhs: v(&[1.0]),
            weight: DMatrix::identity(1, 1),
        };
        assert_eq!(combine(&[t.clone()], 2, 0.0), Err(Error::SingularGram));
        assert!(combine(&[t], 2, 1e-9).is_ok());
        assert!(matches!(combine(&[], 2, 0.0), Err(Error::SingularGram)));
    }

    #[test]
    fn depth_one_and_two_trees_reproduce_the_leaf_system() {
        let base = DsState::from_slices(&[0.4, -0.7], &[0.2, 0.1]);
        let leaf = euclid_leaf("leaf", TaskMap::Identity, 2, 1.5);
        let ds = match &leaf.payload {
            NodePayload::Leaf(ds) => ds.clone(),
            _ => unreachable!(),
        };
        let expected = ds.geometric_acceleration(&base).unwrap();
        let tree = PbdsTree::new(2, vec![leaf.clone()]).unwrap().with_regularization(Regularization::Fixed(0.0));
        assert!((tree.resolve(&base).unwrap() - &expected).norm() < 1e-14);
        let chain = TaskNode::internal("mid", TaskMap::Identity, Chart::Euclidean { dim: 2 }, DMatrix::identity(2, 2), vec![leaf]);
        let tree = PbdsTree::new(2, vec![chain]).unwrap().with_regularization(Regularization::Fixed(0.0));
        assert!((tree.resolve(&base).unwrap() - expected).norm() < 1e-14);
    }

    #[test]
    fn domain_violation_names_the_node() {
        let leaf = TaskNode::leaf(
            "obstacle",
            TaskMap::BallDistance { center: vec![0.0, 0.0], radius: 0.5 },
            SecondOrderDS::new(
                Chart::HalfLine { beta: 0.0, sigma: 1.0 },
                Potential::Barrier { alpha: 1.0, cutoff: 1.0 },
                Dissipation::None,
            )
            .unwrap(),
            DMatrix::identity(1, 1),
        );
        let tree = PbdsTree::new(2, vec![leaf, euclid_leaf("goal", TaskMap::Identity, 2, 1.0)]).unwrap();
        let err = tree.resolve(&DsState::from_slices(&[0.1, 0.0], &[0.0, 0.0])).unwrap_err();
        match err {
            Error::Node { node, source } => {
                assert_eq!(node, "obstacle");
                assert!(matches!(*source, Error::DomainViolation { .. }));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn validation_rejects_inconsistent_trees() {
        let bad_weight = TaskNode {
            weight: DMatrix::identity(3, 3),
            ..euclid_leaf("w", TaskMap::Identity, 2, 0.0)
        };
        assert!(PbdsTree::new(2, vec![bad_weight]).is_err());
        let neg = TaskNode {
            weight: DMatrix::from_diagonal(&v(&[1.0, -1.0])),
            ..euclid_leaf("w", TaskMap::Identity, 2, 0.0)
        };
        assert!(PbdsTree::new(2, vec![neg]).is_err());
        assert!(PbdsTree::new(3, vec![euclid_leaf("x", TaskMap::Identity, 2, 0.0)]).is_err());
        assert!(PbdsTree::new(2, vec![]).is_err());
    }
}
