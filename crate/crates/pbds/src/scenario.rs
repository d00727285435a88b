//! Scenario documents: a strict TOML schema describing the robot, the task
//! tree, controller weights, simulation settings and outputs.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use pbds_core::pbds::{NodePayload, PbdsTree, Regularization, TaskMap, TaskNode, TaskRole};
use pbds_core::qp::{ControllerConfig, SolverSettings};
use pbds_core::sim::{Integrator, RunOptions, SimConfig};
use pbds_core::{Chart, Dissipation, JointState, MassModel, Potential, RobotModel, SecondOrderDS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub robot: RobotSpec,
    pub initial: InitialSpec,
    #[serde(default, skip_serializing_if = "ControllerSpec::is_empty")]
    pub controller: ControllerSpec,
    #[serde(default, skip_serializing_if = "SimSpec::is_empty")]
    pub sim: SimSpec,
    pub tree: TreeSpec,
    #[serde(default, skip_serializing_if = "MetricsSpec::is_empty")]
    pub metrics: MetricsSpec,
    #[serde(default, skip_serializing_if = "OutputSpec::is_empty")]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_lengths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_model: Option<MassModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub armature: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<LimitsSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassModelSpec {
    PointMass,
    UniformRod,
}

/// A scalar applied to every joint, or one value per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    All(f64),
    Each(Vec<f64>),
}

impl Values {
    fn expand(&self, n: usize) -> Result<Vec<f64>, String> {
        match self {
            Values::All(x) => Ok(vec![*x; n]),
            Values::Each(v) if v.len() == n => Ok(v.clone()),
            Values::Each(v) => Err(format!("expected {n} values, got {}", v.len())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_max: Option<Values>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<Values>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qd: Option<Vec<f64>>,
}

/// Scalar `c·I`, a diagonal, or a full matrix given row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl Weight {
    fn matrix(&self, n: usize) -> Result<DMatrix<f64>, String> {
        match self {
            Weight::Scalar(c) => Ok(DMatrix::identity(n, n) * *c),
            Weight::Diagonal(d) if d.len() == n => Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d))),
            Weight::Diagonal(d) => Err(format!("expected {n} diagonal entries, got {}", d.len())),
            Weight::Matrix(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(format!("expected a {n}x{n} matrix"));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Weight::Scalar(c) => vec![*c],
            Weight::Diagonal(d) => d.clone(),
            Weight::Matrix(m) => m.concat(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_weight: Option<Weight>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_weight: Option<Weight>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_limits: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl ControllerSpec {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorSpec {
    SemiImplicitEuler,
    Rk4,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_stride: Option<usize>,
}

impl SimSpec {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegularizationSpec {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<RegularizationSpec>,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleSpec {
    Task,
    Attractor,
    Damping,
    Obstacle,
    Constraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleSpec>,
    pub map: MapSpec,
    pub chart: ChartSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Weight>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ds: Option<DsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub children: Option<Vec<NodeSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapSpec {
    Identity {},
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<Vec<f64>>,
    },
    ForwardKinematics {},
    SphereRetraction {
        center: [f64; 3],
    },
    RadialDistance {
        center: Vec<f64>,
    },
    BallDistance {
        center: Vec<f64>,
        radius: f64,
    },
    GeodesicDistance {
        center: [f64; 3],
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChartSpec {
    Euclidean {
        dim: usize,
    },
    SphereSpherical {},
    SphereStereographic {},
    HalfLine {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsSpec {
    pub potential: PotentialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissipation: Option<DissipationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero {},
    Quadratic { target: Vec<f64>, stiffness: f64 },
    Geodesic { target: [f64; 3], stiffness: f64 },
    Barrier { alpha: f64, cutoff: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DissipationSpec {
    None {},
    MetricProportional { gain: f64 },
    Constant { gain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracked_node: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sphere: Option<SphereSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_window: Option<f64>,
}

impl MetricsSpec {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl OutputSpec {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

/// One semantic problem, located by a dotted path into the document.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{} validation error(s):\n{}", .0.len(), .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Issue>),
}

impl ScenarioError {
    pub fn issues(&self) -> &[Issue] {
        match self {
            ScenarioError::Invalid(v) => v,
            ScenarioError::Syntax { .. } => &[],
        }
    }
}

/// Everything a run needs, built from a validated scenario.
#[derive(Debug, Clone)]
pub struct Built {
    pub model: RobotModel,
    pub tree: PbdsTree,
    pub controller: ControllerConfig,
    pub sim: SimConfig,
    pub init: JointState,
    pub options: RunOptions,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, column)
}

/// Parses and validates a scenario document, reporting every semantic issue.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ScenarioError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    scenario.build().map_err(ScenarioError::Invalid)?;
    Ok(scenario)
}

impl Scenario {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario types always serialize")
    }

    /// Validates and assembles the core objects.
    pub fn build(&self) -> Result<Built, Vec<Issue>> {
        let mut cx = Checker::default();
        let model = cx.robot(&self.robot);
        let n = model.as_ref().map(|m| m.dof());

        let init = n.and_then(|n| cx.initial(&self.initial, n));
        let sim = cx.sim(&self.sim);
        let controller = match (&model, &sim) {
            (Some(m), Some(s)) => cx.controller(&self.controller, m, s.dt),
            _ => None,
        };
        let tree = model.as_ref().and_then(|m| cx.tree(&self.tree, m));
        let options = cx.metrics(&self.metrics, tree.as_ref());

        if let (Some(tree), Some(init)) = (&tree, &init) {
            let base = pbds_core::DsState::new(init.q.clone(), init.qd.clone());
            if let Err(e) = tree.resolve(&base) {
                cx.issue("initial", format!("tree cannot be evaluated at the initial state: {e}"));
            }
        }
        match (model, tree, controller, sim, init, options) {
            (Some(model), Some(tree), Some(controller), Some(sim), Some(init), Some(options)) if cx.issues.is_empty() => {
                Ok(Built {
                    model,
                    tree,
                    controller,
                    sim,
                    init,
                    options,
                })
            }
            _ => Err(cx.issues),
        }
    }
}

#[derive(Default)]
struct Checker {
    issues: Vec<Issue>,
}

impl Checker {
    fn issue(&mut self, path: &str, message: impl Into<String>) {
        self.issues.push(Issue {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn finite(&mut self, path: &str, values: &[f64]) -> bool {
        if values.iter().any(|x| x.is_nan()) {
            self.issue(path, "must not be NaN");
            return false;
        }
        true
    }

    fn positive(&mut self, path: &str, x: f64) -> bool {
        if !(x > 0.0 && x.is_finite()) {
            self.issue(path, format!("must be positive and finite, got {x}"));
            return false;
        }
        true
    }

    fn non_negative(&mut self, path: &str, x: f64) -> bool {
        if !(x >= 0.0 && x.is_finite()) {
            self.issue(path, format!("must be non-negative and finite, got {x}"));
            return false;
        }
        true
    }

    fn robot(&mut self, spec: &RobotSpec) -> Option<RobotModel> {
        let Some(mut model) = RobotModel::preset(&spec.preset) else {
            self.issue(
                "robot.preset",
                format!("unknown preset {:?}; expected planar1, planar2, planar3 or spatial3r", spec.preset),
            );
            return None;
        };
        let n = model.dof();
        let mut ok = true;
        if let Some(l) = &spec.link_lengths {
            if l.len() != n {
                self.issue("robot.link_lengths", format!("expected {n} values, got {}", l.len()));
                ok = false;
            } else {
                for (i, &x) in l.iter().enumerate() {
                    ok &= self.positive(&format!("robot.link_lengths[{i}]"), x);
                }
                model.link_lengths = l.clone();
            }
        }
        if let Some(m) = &spec.masses {
            if m.len() != n {
                self.issue("robot.masses", format!("expected {n} values, got {}", m.len()));
                ok = false;
            } else {
                for (i, &x) in m.iter().enumerate() {
                    ok &= self.positive(&format!("robot.masses[{i}]"), x);
                }
                model.masses = m.clone();
            }
        }
        if spec.link_lengths.is_some() || spec.masses.is_some() || spec.mass_model.is_some() {
            if let Some(mm) = spec.mass_model {
                model.mass_model = match mm {
                    MassModelSpec::PointMass => MassModel::PointMass,
                    MassModelSpec::UniformRod => MassModel::UniformRod,
                };
            }
            model.rod_inertias = model
                .masses
                .iter()
                .zip(&model.link_lengths)
                .map(|(m, l)| m * l * l / 12.0)
                .collect();
        }
        if let Some(a) = &spec.armature {
            match a.expand(n) {
                Ok(v) => {
                    for (i, &x) in v.iter().enumerate() {
                        ok &= self.non_negative(&format!("robot.armature[{i}]"), x);
                    }
                    model.armature = v;
                }
                Err(e) => {
                    self.issue("robot.armature", e);
                    ok = false;
                }
            }
        }
        if let Some(g) = spec.gravity {
            if g.iter().any(|x| !x.is_finite()) {
                self.issue("robot.gravity", "must be finite");
                ok = false;
            }
            model.gravity = g;
        }
        if let Some(l) = &spec.limits {
            let fields: [(&str, &Option<Values>, &mut Vec<f64>); 5] = [
                ("q_min", &l.q_min, &mut model.limits.q_min),
                ("q_max", &l.q_max, &mut model.limits.q_max),
                ("v_max", &l.v_max, &mut model.limits.v_max),
                ("a_max", &l.a_max, &mut model.limits.a_max),
                ("tau_max", &l.tau_max, &mut model.limits.tau_max),
            ];
            let mut issues = Vec::new();
            for (name, value, target) in fields {
                if let Some(v) = value {
                    match v.expand(n) {
                        Ok(v) => {
                            if v.iter().any(|x| x.is_nan()) {
                                issues.push((format!("robot.limits.{name}"), "must not be NaN".to_string()));
                            } else if name != "q_min" && name != "q_max" && v.iter().any(|&x| !(x > 0.0)) {
                                issues.push((format!("robot.limits.{name}"), "must be positive".to_string()));
                            }
                            *target = v;
                        }
                        Err(e) => issues.push((format!("robot.limits.{name}"), e)),
                    }
                }
            }
            for (p, m) in issues {
                self.issue(&p, m);
                ok = false;
            }
        }
        if !ok {
            return None;
        }
        if let Err(e) = model.validate() {
            self.issue("robot", e.to_string());
            return None;
        }
        Some(model)
    }

    fn initial(&mut self, spec: &InitialSpec, n: usize) -> Option<JointState> {
        let mut ok = true;
        if spec.q.len() != n {
            self.issue("initial.q", format!("expected {n} values, got {}", spec.q.len()));
            ok = false;
        }
        let qd = spec.qd.clone().unwrap_or_else(|| vec![0.0; n]);
        if qd.len() != n {
            self.issue("initial.qd", format!("expected {n} values, got {}", qd.len()));
            ok = false;
        }
        if spec.q.iter().chain(&qd).any(|x| !x.is_finite()) {
            self.issue("initial", "joint state must be finite");
            ok = false;
        }
        ok.then(|| JointState::from_slices(&spec.q, &qd))
    }

    fn sim(&mut self, spec: &SimSpec) -> Option<SimConfig> {
        let d = SimConfig::default();
        let cfg = SimConfig {
            dt: spec.dt.unwrap_or(d.dt),
            duration: spec.duration.unwrap_or(d.duration),
            integrator: match spec.integrator {
                Some(IntegratorSpec::Rk4) => Integrator::Rk4,
                _ => Integrator::SemiImplicitEuler,
            },
            log_stride: spec.log_stride.unwrap_or(d.log_stride),
        };
        let mut ok = self.positive("sim.dt", cfg.dt);
        ok &= self.positive("sim.duration", cfg.duration);
        if ok && cfg.duration < cfg.dt {
            self.issue("sim.duration", "must be at least sim.dt");
            ok = false;
        }
        if cfg.log_stride == 0 {
            self.issue("sim.log_stride", "must be positive");
            ok = false;
        }
        ok.then_some(cfg)
    }

    fn controller(&mut self, spec: &ControllerSpec, model: &RobotModel, dt: f64) -> Option<ControllerConfig> {
        let (n, nt) = (model.dof(), model.n_actuators());
        let mut cfg = ControllerConfig::default_for(n, nt, dt);
        let mut ok = true;
        if let Some(w) = &spec.q_weight {
            match w.matrix(n) {
                Ok(m) => cfg.q_weight = m,
                Err(e) => {
                    self.issue("controller.q_weight", e);
                    ok = false;
                }
            }
        }
        if let Some(w) = &spec.r_weight {
            match w.matrix(nt) {
                Ok(m) => cfg.r_weight = m,
                Err(e) => {
                    self.issue("controller.r_weight", e);
                    ok = false;
                }
            }
        }
        if let Some(h) = spec.dt_limits {
            ok &= self.positive("controller.dt_limits", h);
            cfg.dt_limits = h;
        }
        if let Some(it) = spec.max_iter {
            if it == 0 {
                self.issue("controller.max_iter", "must be positive");
                ok = false;
            }
            cfg.solver = SolverSettings {
                max_iter: it,
                ..cfg.solver
            };
        }
        if !ok {
            return None;
        }
        if let Err(e) = cfg.validate(model) {
            self.issue("controller", e.to_string());
            return None;
        }
        Some(cfg)
    }

    fn tree(&mut self, spec: &TreeSpec, model: &RobotModel) -> Option<PbdsTree> {
        let reg = match &spec.regularization {
            None => Regularization::Auto,
            Some(RegularizationSpec::Named(s)) if s == "auto" => Regularization::Auto,
            Some(RegularizationSpec::Named(s)) => {
                self.issue("tree.regularization", format!("expected \"auto\" or a number, got {s:?}"));
                return None;
            }
            Some(RegularizationSpec::Fixed(l)) => {
                if !self.non_negative("tree.regularization", *l) {
                    return None;
                }
                Regularization::Fixed(*l)
            }
        };
        if spec.nodes.is_empty() {
            self.issue("tree.nodes", "at least one task node is required");
            return None;
        }
        let base = Chart::Euclidean { dim: model.dof() };
        let mut names = Vec::new();
        let nodes: Vec<Option<TaskNode>> = spec
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| self.node(node, &format!("tree.nodes[{i}]"), &base, model, &mut names))
            .collect();
        if nodes.iter().any(|n| n.is_none()) {
            return None;
        }
        let nodes: Vec<TaskNode> = nodes.into_iter().flatten().collect();
        match PbdsTree::on_chart(base, nodes) {
            Ok(t) => Some(t.with_regularization(reg)),
            Err(e) => {
                self.issue("tree", e.to_string());
                None
            }
        }
    }

    fn node(
        &mut self,
        spec: &NodeSpec,
        path: &str,
        parent: &Chart,
        model: &RobotModel,
        names: &mut Vec<String>,
    ) -> Option<TaskNode> {
        let mut ok = true;
        if spec.name.is_empty() {
            self.issue(&format!("{path}.name"), "must not be empty");
            ok = false;
        } else if names.contains(&spec.name) {
            self.issue(&format!("{path}.name"), format!("duplicate node name {:?}", spec.name));
            ok = false;
        }
        names.push(spec.name.clone());
        let chart = self.chart(&spec.chart, &format!("{path}.chart"));
        let map = self.map(&spec.map, &format!("{path}.map"), model);
        let weight = match (&chart, &spec.weight) {
            (Some(c), Some(w)) => {
                let wp = format!("{path}.weight");
                if !self.finite(&wp, &w.values()) {
                    None
                } else {
                    match w.matrix(c.dim()) {
                        Ok(m) => Some(m),
                        Err(e) => {
                            self.issue(&wp, e);
                            None
                        }
                    }
                }
            }
            (Some(c), None) => Some(DMatrix::identity(c.dim(), c.dim())),
            _ => None,
        };
        let role = match spec.role.unwrap_or(RoleSpec::Task) {
            RoleSpec::Task => TaskRole::Task,
            RoleSpec::Attractor => TaskRole::Attractor,
            RoleSpec::Damping => TaskRole::Damping,
            RoleSpec::Obstacle => TaskRole::Obstacle,
            RoleSpec::Constraint => TaskRole::Constraint,
        };
        let payload = match (&spec.ds, &spec.children, &chart) {
            (Some(_), Some(_), _) => {
                self.issue(path, "a node has either `ds` or `children`, not both");
                None
            }
            (None, None, _) => {
                self.issue(path, "a node needs `ds` (leaf) or `children` (internal)");
                None
            }
            (Some(ds), None, Some(c)) => self.ds(ds, &format!("{path}.ds"), c).map(NodePayload::Leaf),
            (None, Some(children), Some(c)) => {
                if children.is_empty() {
                    self.issue(&format!("{path}.children"), "must not be empty");
                    None
                } else {
                    let built: Vec<Option<TaskNode>> = children
                        .iter()
                        .enumerate()
                        .map(|(i, ch)| self.node(ch, &format!("{path}.children[{i}]"), c, model, names))
                        .collect();
                    if built.iter().all(|b| b.is_some()) {
                        Some(NodePayload::Internal(built.into_iter().flatten().collect()))
                    } else {
                        None
                    }
                }
            }
            _ => None,
        };
        let (Some(chart), Some(map), Some(weight), Some(payload)) = (chart, map, weight, payload) else {
            return None;
        };
        if !ok {
            return None;
        }
        let node = TaskNode {
            name: spec.name.clone(),
            map,
            chart,
            weight,
            role,
            payload,
        };
        if let Err(e) = node.validate(parent) {
            self.issue(path, e.to_string());
            return None;
        }
        Some(node)
    }

    fn chart(&mut self, spec: &ChartSpec, path: &str) -> Option<Chart> {
        let chart = match spec {
            ChartSpec::Euclidean { dim } => {
                if *dim == 0 {
                    self.issue(&format!("{path}.dim"), "must be positive");
                    return None;
                }
                Chart::Euclidean { dim: *dim }
            }
            ChartSpec::SphereSpherical {} => Chart::SphereSpherical,
            ChartSpec::SphereStereographic {} => Chart::SphereStereographic,
            ChartSpec::HalfLine { beta, sigma } => {
                let (beta, sigma) = (beta.unwrap_or(0.0), sigma.unwrap_or(1.0));
                let ok = self.non_negative(&format!("{path}.beta"), beta) & self.positive(&format!("{path}.sigma"), sigma);
                if !ok {
                    return None;
                }
                Chart::HalfLine { beta, sigma }
            }
        };
        Some(chart)
    }

    fn map(&mut self, spec: &MapSpec, path: &str, model: &RobotModel) -> Option<TaskMap> {
        Some(match spec {
            MapSpec::Identity {} => TaskMap::Identity,
            MapSpec::ForwardKinematics {} => TaskMap::ForwardKinematics(model.clone()),
            MapSpec::Linear { matrix, offset } => {
                let rows = matrix.len();
                let cols = matrix.first().map_or(0, |r| r.len());
                if rows == 0 || cols == 0 || matrix.iter().any(|r| r.len() != cols) {
                    self.issue(&format!("{path}.matrix"), "must be a non-empty rectangular matrix");
                    return None;
                }
                if !self.finite(&format!("{path}.matrix"), &matrix.concat()) {
                    return None;
                }
                let offset = offset.clone().unwrap_or_else(|| vec![0.0; rows]);
                if offset.len() != rows {
                    self.issue(&format!("{path}.offset"), format!("expected {rows} values, got {}", offset.len()));
                    return None;
                }
                TaskMap::Linear {
                    matrix: DMatrix::from_fn(rows, cols, |i, j| matrix[i][j]),
                    offset: DVector::from_vec(offset),
                }
            }
            MapSpec::SphereRetraction { center } => {
                if !self.finite(&format!("{path}.center"), center) {
                    return None;
                }
                TaskMap::SphereRetraction { center: *center }
            }
            MapSpec::RadialDistance { center } => {
                if !self.finite(&format!("{path}.center"), center) {
                    return None;
                }
                TaskMap::RadialDistance { center: center.clone() }
            }
            MapSpec::BallDistance { center, radius } => {
                let ok = self.finite(&format!("{path}.center"), center) & self.positive(&format!("{path}.radius"), *radius);
                if !ok {
                    return None;
                }
                TaskMap::BallDistance {
                    center: center.clone(),
                    radius: *radius,
                }
            }
            MapSpec::GeodesicDistance { center, radius } => {
                let mut ok = self.finite(&format!("{path}.center"), center);
                ok &= self.positive(&format!("{path}.radius"), *radius);
                let norm = center.iter().map(|x| x * x).sum::<f64>().sqrt();
                if ok && (norm - 1.0).abs() > 1e-9 {
                    self.issue(&format!("{path}.center"), "must be a unit vector");
                    ok = false;
                }
                if !ok {
                    return None;
                }
                TaskMap::GeodesicDistance {
                    center: *center,
                    radius: *radius,
                }
            }
        })
    }

    fn ds(&mut self, spec: &DsSpec, path: &str, chart: &Chart) -> Option<SecondOrderDS> {
        let pp = format!("{path}.potential");
        let potential = match &spec.potential {
            PotentialSpec::Zero {} => Some(Potential::Zero),
            PotentialSpec::Quadratic { target, stiffness } => {
                let ok = self.finite(&format!("{pp}.target"), target) & self.non_negative(&format!("{pp}.stiffness"), *stiffness);
                ok.then(|| Potential::Quadratic {
                    target: DVector::from_column_slice(target),
                    stiffness: *stiffness,
                })
            }
            PotentialSpec::Geodesic { target, stiffness } => {
                let ok = self.finite(&format!("{pp}.target"), target) & self.non_negative(&format!("{pp}.stiffness"), *stiffness);
                ok.then_some(Potential::Geodesic {
                    target: *target,
                    stiffness: *stiffness,
                })
            }
            PotentialSpec::Barrier { alpha, cutoff } => {
                let ok = self.positive(&format!("{pp}.alpha"), *alpha) & self.positive(&format!("{pp}.cutoff"), *cutoff);
                ok.then_some(Potential::Barrier {
                    alpha: *alpha,
                    cutoff: *cutoff,
                })
            }
        };
        let dp = format!("{path}.dissipation");
        let dissipation = match spec.dissipation.as_ref().unwrap_or(&DissipationSpec::None {}) {
            DissipationSpec::None {} => Some(Dissipation::None),
            DissipationSpec::MetricProportional { gain } => self
                .non_negative(&format!("{dp}.gain"), *gain)
                .then_some(Dissipation::MetricProportional { gain: *gain }),
            DissipationSpec::Constant { gain } => self
                .non_negative(&format!("{dp}.gain"), *gain)
                .then_some(Dissipation::Constant { gain: *gain }),
        };
        let (potential, dissipation) = (potential?, dissipation?);
        match SecondOrderDS::new(chart.clone(), potential, dissipation) {
            Ok(ds) => Some(ds),
            Err(e) => {
                self.issue(path, e.to_string());
                None
            }
        }
    }

    fn metrics(&mut self, spec: &MetricsSpec, tree: Option<&PbdsTree>) -> Option<RunOptions> {
        let d = RunOptions::default();
        let mut ok = true;
        if let (Some(name), Some(tree)) = (&spec.tracked_node, tree) {
            if tree.find(name).is_none() {
                self.issue("metrics.tracked_node", format!("no task node named {name:?}"));
                ok = false;
            }
        }
        let length_scale = spec.length_scale.unwrap_or(d.length_scale);
        ok &= self.positive("metrics.length_scale", length_scale);
        let rmse_window = spec.rmse_window.unwrap_or(d.rmse_window);
        ok &= self.positive("metrics.rmse_window", rmse_window);
        if let Some(s) = &spec.sphere {
            ok &= self.finite("metrics.sphere.center", &s.center);
            ok &= self.positive("metrics.sphere.radius", s.radius);
        }
        ok.then(|| RunOptions {
            tracked_node: spec.tracked_node.clone(),
            length_scale,
            sphere: spec.sphere.as_ref().map(|s| (s.center, s.radius)),
            rmse_window,
            ..d
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"

[robot]
preset = "planar2"

[initial]
q = [0.1, 0.2]

[[tree.nodes]]
name = "goal"
map = { kind = "identity" }
chart = { kind = "euclidean", dim = 2 }
ds = { potential = { kind = "quadratic", target = [0.5, 0.5], stiffness = 4.0 }, dissipation = { kind = "constant", gain = 4.0 } }
"#;

    #[test]
    fn minimal_document() {
        let s = parse_scenario(MINIMAL).unwrap();
        let b = s.build().unwrap();
        assert_eq!(b.model.dof(), 2);
        assert_eq!(b.tree.leaf_nodes().len(), 1);
        assert_eq!(b.sim.dt, 1e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("preset = \"planar2\"", "preset = \"planar2\"\ncolour = \"red\"");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Syntax { .. })));
        let text = MINIMAL.replace("kind = \"identity\"", "kind = \"identity\", scale = 2.0");
        assert!(matches!(parse_scenario(&text), Err(ScenarioError::Syntax { .. })));
    }

    #[test]
    fn syntax_errors_carry_a_location() {
        let err = parse_scenario("name = \"x\"\n[robot\n").unwrap_err();
        match err {
            ScenarioError::Syntax { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn all_semantic_errors_are_reported() {
        let text = MINIMAL
            .replace("q = [0.1, 0.2]", "q = [0.1]")
            .replace("stiffness = 4.0", "stiffness = -4.0");
        let err = parse_scenario(&text).unwrap_err();
        let paths: Vec<_> = err.issues().iter().map(|i| i.path.as_str()).collect();
        assert!(paths.contains(&"initial.q"), "{paths:?}");
        assert!(paths.contains(&"tree.nodes[0].ds.potential.stiffness"), "{paths:?}");
    }

    #[test]
    fn negative_obstacle_radius_names_the_field() {
        let text = format!(
            "{MINIMAL}\n[[tree.nodes]]\nname = \"obs\"\nrole = \"obstacle\"\nmap = {{ kind = \"ball-distance\", center = [2.0, 0.0], radius = -0.1 }}\nchart = {{ kind = \"half-line\" }}\nds = {{ potential = {{ kind = \"barrier\", alpha = 0.1, cutoff = 0.5 }} }}\n"
        );
        let err = parse_scenario(&text).unwrap_err();
        assert_eq!(err.issues().len(), 1);
        assert_eq!(err.issues()[0].path, "tree.nodes[1].map.radius");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let text = MINIMAL.replace("dim = 2", "dim = 3").replace("[0.5, 0.5]", "[0.5, 0.5, 0.5]");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.issues()[0].path.starts_with("tree.nodes[0]"), "{err}");
    }

    #[test]
    fn round_trip() {
        let s = parse_scenario(MINIMAL).unwrap();
        let again = parse_scenario(&s.to_toml()).unwrap();
        assert_eq!(s, again);
    }
}
