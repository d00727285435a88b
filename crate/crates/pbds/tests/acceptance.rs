//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::process::{Command, ExitCode};
use std::time::Instant;

use pbds::runner::{self, StdClock};
use pbds::selftest::{self, Check, Options};
use pbds::Built;
use pbds_core::sim::RunOutput;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn from_checks(checks: &[Check]) -> Self {
        Self {
            passed: checks.iter().all(|c| c.passed),
            detail: match checks {
                [one] => one.detail.clone(),
                many => many
                    .iter()
                    .map(|c| format!("{}: {}", c.name, c.detail))
                    .collect::<Vec<_>>()
                    .join("; "),
            },
        }
    }

    fn fail(detail: impl Into<String>) -> Self {
        Self {
            passed: false,
            detail: detail.into(),
        }
    }
}

fn preset(name: &str) -> Built {
    runner::load(name).unwrap_or_else(|e| panic!("{name}: {e}")).1
}

fn run_every_tick(mut built: Built) -> Result<RunOutput, String> {
    built.sim.log_stride = 1;
    runner::run(&built, &StdClock::default()).map_err(|e| e.to_string())
}

fn closed_loop_tracking() -> Outcome {
    let generous = match run_every_tick(preset("euclidean_attractor")) {
        Ok(o) => o,
        Err(e) => return Outcome::fail(format!("generous run: {e}")),
    };
    let n_tau = generous.records[0].tau.len();
    let peak: Vec<f64> = (0..n_tau)
        .map(|i| generous.records.iter().map(|r| r.tau[i].abs()).fold(0.0, f64::max))
        .collect();
    let gm = &generous.metrics;
    let final_rmse = gm.ee_rmse_final.unwrap_or(f64::INFINITY);

    let tight_built = preset("torque_limited_tracking");
    let bound = tight_built.model.limits.tau_max.clone();
    let thirty_percent = bound
        .iter()
        .zip(&peak)
        .all(|(b, p)| *b <= 0.3 * p && *b >= 0.299 * p);
    let tight = match run_every_tick(tight_built) {
        Ok(o) => o,
        Err(e) => return Outcome::fail(format!("torque-limited run: {e}")),
    };
    let tm = &tight.metrics;
    let excess = tight
        .records
        .iter()
        .flat_map(|r| r.tau.iter().zip(&bound).map(|(t, b)| t.abs() - b))
        .fold(f64::NEG_INFINITY, f64::max);
    let degraded = tm.ee_rmse.unwrap_or(0.0) > gm.ee_rmse.unwrap_or(f64::INFINITY);
    let passed = gm.completed
        && gm.solver_failures == 0
        && final_rmse <= 5e-3
        && thirty_percent
        && tm.completed
        && tm.solver_failures == 0
        && excess <= 1e-8
        && tm.max_torque_excess <= 1e-8
        && degraded;
    Outcome {
        passed,
        detail: format!(
            "final-window RMSE {final_rmse:.2e} m; bounds {bound:?} vs peak {peak:.4?}; \
             limited: max |tau| - bound {excess:.2e}, RMSE {:.2e} vs {:.2e}, {} failures, {} limit activations",
            tm.ee_rmse.unwrap_or(f64::NAN),
            gm.ee_rmse.unwrap_or(f64::NAN),
            tm.solver_failures,
            tm.torque_limit_activations,
        ),
    }
}

fn obstacle_avoidance() -> Outcome {
    let start = Instant::now();
    let built = preset("sphere_obstacles");
    let obstacles = runner::obstacle_count(&built);
    let out = match runner::run(&built, &StdClock::default()) {
        Ok(o) => o,
        Err(e) => return Outcome::fail(e.to_string()),
    };
    let secs = start.elapsed().as_secs_f64();
    let m = &out.metrics;
    let clearance = m.min_obstacle_clearance.unwrap_or(f64::NEG_INFINITY);
    let logged = out
        .records
        .iter()
        .flat_map(|r| r.obstacle_distances.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let distance = m.final_attractor_distance.unwrap_or(f64::INFINITY);
    Outcome {
        passed: obstacles == 2
            && m.completed
            && clearance > 0.0
            && logged > 0.0
            && distance <= 5e-2
            && secs < 60.0,
        detail: format!(
            "{obstacles} obstacles, min clearance {clearance:.3e}, final geodesic distance {distance:.2e}, {secs:.1} s"
        ),
    }
}

fn cli_run(dir: &std::path::Path) -> Result<Vec<Vec<u8>>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pbds"))
        .args(["run", "--scenario", "sphere_obstacles.cfg", "--out", "traj.csv", "--metrics", "m.json"])
        .current_dir(dir)
        .env_remove(runner::OUTPUT_DIR_ENV)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()));
    }
    ["traj.csv", "sphere_obstacles_ref.csv"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}")))
        .collect()
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: Result<Vec<_>, _> = dirs.iter().map(|d| cli_run(d.path())).collect();
    match runs {
        Ok(r) => Outcome {
            passed: r[0] == r[1] && !r[0][0].is_empty(),
            detail: format!("trajectory CSV {} bytes, identical: {}", r[0][0].len(), r[0] == r[1]),
        },
        Err(e) => Outcome::fail(e),
    }
}

fn main() -> ExitCode {
    let o = Options::default();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("geometry oracle", Box::new(move || Outcome::from_checks(&[selftest::geometry(&o)]))),
        ("chart consistency", Box::new(|| Outcome::from_checks(&[selftest::chart_consistency()]))),
        ("combine oracle", Box::new(move || Outcome::from_checks(&[selftest::combine_oracle(&o)]))),
        ("qp oracle", Box::new(move || Outcome::from_checks(&[selftest::qp_oracle(&o)]))),
        (
            "dynamics oracle",
            Box::new(move || Outcome::from_checks(&[selftest::dynamics_oracle(&o), selftest::passivity()])),
        ),
        ("stability", Box::new(move || Outcome::from_checks(&[selftest::stability(&o)]))),
        ("closed-loop tracking", Box::new(closed_loop_tracking)),
        ("obstacle avoidance", Box::new(obstacle_avoidance)),
        ("determinism", Box::new(determinism)),
    ];
    let mut all = true;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        all &= r.passed;
        println!("{} {}. {name}: {}", if r.passed { "PASS" } else { "FAIL" }, k + 1, r.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
