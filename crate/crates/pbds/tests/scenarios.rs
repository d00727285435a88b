use pbds::presets::{self, PRESETS};
use pbds::scenario::parse_scenario;
use pbds::scenario::PotentialSpec;
use pbds::ScenarioError;
use pbds_core::pbds::{NodePayload, TaskMap, TaskRole};
use pbds_core::Chart;
use proptest::prelude::*;

const PLANAR2: &str = r#"
name = "two-link"

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

fn with_obstacle(radius: f64) -> String {
    format!(
        "{PLANAR2}\n[[tree.nodes]]\nname = \"obs\"\nrole = \"obstacle\"\n\
         map = {{ kind = \"ball-distance\", center = [2.0, 0.0], radius = {radius:?} }}\n\
         chart = {{ kind = \"half-line\" }}\n\
         ds = {{ potential = {{ kind = \"barrier\", alpha = 0.1, cutoff = 0.5 }} }}\n"
    )
}

#[test]
fn planar2_document_builds_with_defaults() {
    let (_, built) = pbds::runner::load_str(PLANAR2).unwrap();
    assert_eq!(built.model.dof(), 2);
    assert_eq!(built.tree.leaf_nodes().len(), 1);
    assert!(built.sim.duration > 0.0);
}

#[test]
fn negative_radius_is_reported_by_path() {
    let err = parse_scenario(&with_obstacle(-0.1)).unwrap_err();
    assert!(matches!(err, ScenarioError::Invalid(_)));
    let paths: Vec<_> = err.issues().iter().map(|i| i.path.as_str()).collect();
    assert_eq!(paths, ["tree.nodes[1].map.radius"]);
    assert!(parse_scenario(&with_obstacle(0.1)).is_ok());
}

#[test]
fn every_issue_is_listed_at_once() {
    let text = PLANAR2
        .replace("q = [0.1, 0.2]", "q = [0.1, 0.2, 0.3]")
        .replace("gain = 4.0", "gain = -1.0")
        .replace("stiffness = 4.0", "stiffness = -4.0");
    let err = parse_scenario(&text).unwrap_err();
    assert!(err.issues().len() >= 3, "{err}");
    assert!(err.to_string().contains("validation error"));
}

#[test]
fn sphere_obstacles_chains_r3_into_the_sphere() {
    let (_, built) = pbds::runner::load("sphere_obstacles").unwrap();
    let ee = built.tree.find("ee").expect("ee node");
    assert!(matches!(ee.map, TaskMap::ForwardKinematics(_)));
    assert_eq!(ee.chart, Chart::Euclidean { dim: 3 });
    let NodePayload::Internal(children) = &ee.payload else {
        panic!("ee should be internal");
    };
    let sphere = children.iter().find(|c| c.name == "sphere").expect("sphere node");
    assert!(matches!(sphere.map, TaskMap::SphereRetraction { .. }));
    let NodePayload::Internal(leaves) = &sphere.payload else {
        panic!("sphere should be internal");
    };
    let roles: Vec<_> = leaves.iter().map(|l| l.role).collect();
    assert!(roles.contains(&TaskRole::Attractor));
    assert!(roles.contains(&TaskRole::Damping));
    assert_eq!(roles.iter().filter(|r| **r == TaskRole::Obstacle).count(), 2);
    for obstacle in leaves.iter().filter(|l| l.role == TaskRole::Obstacle) {
        assert!(matches!(obstacle.map, TaskMap::GeodesicDistance { .. }));
        assert!(matches!(obstacle.chart, Chart::HalfLine { .. }));
    }
}

#[test]
fn presets_round_trip() {
    for (name, text) in PRESETS {
        let s = parse_scenario(text).unwrap();
        let again = parse_scenario(&s.to_toml()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(s, again, "{name}");
    }
    assert!(presets::preset("sphere_obstacles.cfg").is_some());
    assert!(presets::preset("nope").is_none());
}

fn mutate(q: [f64; 2], target: [f64; 2], stiffness: f64, dt: f64, steps: u32) -> String {
    let mut s = parse_scenario(PLANAR2).unwrap();
    s.initial.q = q.to_vec();
    s.sim.dt = Some(dt);
    s.sim.duration = Some(dt * f64::from(steps));
    s.tree.nodes[0].ds.as_mut().unwrap().potential = PotentialSpec::Quadratic {
        target: target.to_vec(),
        stiffness,
    };
    s.to_toml()
}

proptest! {
    #[test]
    fn parse_after_serialize_is_identity(
        q in prop::array::uniform2(-2.5..2.5f64),
        target in prop::array::uniform2(-1.0..1.0f64),
        stiffness in 1e-3..1e3f64,
        dt in 1e-4..1e-2f64,
        steps in 1u32..10_000,
    ) {
        let s = parse_scenario(&mutate(q, target, stiffness, dt, steps)).unwrap();
        prop_assert_eq!(&s.initial.q, &q.to_vec());
        let again = parse_scenario(&s.to_toml()).unwrap();
        prop_assert_eq!(s, again);
    }
}
