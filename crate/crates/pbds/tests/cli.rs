use std::path::Path;
use std::process::{Command, Output};

use pbds::runner::OUTPUT_DIR_ENV;

fn pbds(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbds"))
        .args(args)
        .current_dir(dir)
        .env_remove(OUTPUT_DIR_ENV)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SHORT: &str = r#"
name = "short"

[robot]
preset = "planar2"

[initial]
q = [0.1, 0.2]

[sim]
duration = 0.05
log_stride = 1

[[tree.nodes]]
name = "goal"
map = { kind = "forward-kinematics" }
chart = { kind = "euclidean", dim = 2 }
ds = { potential = { kind = "quadratic", target = [0.5, 0.5], stiffness = 4.0 }, dissipation = { kind = "constant", gain = 4.0 } }

[metrics]
tracked_node = "goal"
"#;

#[test]
fn run_writes_trajectory_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("short.cfg"), SHORT).unwrap();
    let o = pbds(dir.path(), &["run", "-s", "short.cfg", "--out", "t.csv", "--metrics", "m.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("t,"));
    assert!(lines.count() > 10);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(metrics["scenario"], "short");
}

#[test]
fn invalid_documents_exit_with_every_issue() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SHORT
        .replace("q = [0.1, 0.2]", "q = [0.1]")
        .replace("stiffness = 4.0", "stiffness = -4.0");
    std::fs::write(dir.path().join("bad.cfg"), bad).unwrap();
    let o = pbds(dir.path(), &["validate", "-s", "bad.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("initial.q"), "{err}");
    assert!(err.contains("tree.nodes[0].ds.potential.stiffness"), "{err}");

    let o = pbds(dir.path(), &["run", "-s", "bad.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("short.csv").exists());
}

#[test]
fn missing_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbds(dir.path(), &["validate", "-s", "no_such_file.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_accepts_every_preset() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["validate"];
    for n in pbds::presets::names() {
        args.extend(["-s", n]);
    }
    let o = pbds(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn reference_rollout_is_written() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("short.cfg"), SHORT).unwrap();
    let o = pbds(dir.path(), &["reference", "-s", "short.cfg"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("short_ref.csv")).unwrap();
    assert!(csv.lines().count() > 10);
}

#[test]
fn output_dir_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("short.cfg"), SHORT).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pbds"))
        .args(["run", "-s", "short.cfg"])
        .current_dir(dir.path())
        .env(OUTPUT_DIR_ENV, "out")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("out/short.csv").exists());
    assert!(dir.path().join("out/short.json").exists());
}

#[test]
fn batch_runs_reject_single_file_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("short.cfg"), SHORT).unwrap();
    let o = pbds(dir.path(), &["run", "-s", "short.cfg", "-s", "short.cfg", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn quick_selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbds(dir.path(), &["selftest", "--quick"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn presets_are_listed_and_printed() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbds(dir.path(), &["presets"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("sphere_obstacles"));
    let o = pbds(dir.path(), &["presets", "sphere_obstacles"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("[[tree.nodes]]"));
    assert_eq!(pbds(dir.path(), &["presets", "nope"]).status.code(), Some(1));
}
