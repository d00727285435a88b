use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pbds::runner::{self, LoadError, StdClock};
use pbds::{selftest, Built, Scenario};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_SELFTEST: u8 = 3;

#[derive(Parser)]
#[command(name = "pbds", version, about = "PBDS task trees under a QP inverse-dynamics controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run closed-loop simulations and write trajectory CSV and metrics JSON.
    Run(RunArgs),
    /// Parse and validate scenarios without running them.
    Validate(ScenarioArgs),
    /// Roll out the tracked task DS alone, without the robot, and write CSV.
    Reference(ReferenceArgs),
    /// Run the built-in oracle and property checks.
    Selftest(SelftestArgs),
    /// List the shipped preset scenarios, or print one.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file or preset name; repeat to process several.
    #[arg(long = "scenario", short = 's', required = true)]
    scenarios: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: ScenarioArgs,
    /// Trajectory CSV path (single scenario only).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics JSON path (single scenario only).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Also write the reference rollout to this CSV (single scenario only).
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct ReferenceArgs {
    #[arg(long = "scenario", short = 's')]
    scenario: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Fewer random samples per check.
    #[arg(long)]
    quick: bool,
    /// Seed for the random instances.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(a) => run(a),
        Command::Validate(a) => validate(a),
        Command::Reference(a) => reference(a),
        Command::Selftest(a) => self_test(a),
        Command::Presets { name } => presets(name),
    };
    ExitCode::from(code)
}

fn load_all(specs: &[String]) -> Result<Vec<(Scenario, Built)>, u8> {
    let mut out = Vec::new();
    let mut failed = false;
    for spec in specs {
        match runner::load(spec) {
            Ok(x) => out.push(x),
            Err(e) => {
                failed = true;
                eprintln!("{spec}: {e}");
                if matches!(e, LoadError::Read { .. }) {
                    return Err(EXIT_RUNTIME);
                }
            }
        }
    }
    if failed {
        Err(EXIT_VALIDATION)
    } else {
        Ok(out)
    }
}

fn pick(explicit: Option<PathBuf>, scenario: &Scenario, configured: &Option<String>, suffix: &str) -> PathBuf {
    match explicit {
        Some(p) => p,
        None => {
            let file = configured.clone().unwrap_or_else(|| format!("{}{suffix}", scenario.name));
            runner::output_path(scenario, &file)
        }
    }
}

fn run(a: RunArgs) -> u8 {
    let loaded = match load_all(&a.input.scenarios) {
        Ok(l) => l,
        Err(c) => return c,
    };
    if loaded.len() > 1 && (a.out.is_some() || a.metrics.is_some() || a.reference.is_some()) {
        eprintln!("--out, --metrics and --reference need a single --scenario");
        return EXIT_VALIDATION;
    }
    let outputs = if loaded.len() == 1 {
        vec![runner::run(&loaded[0].1, &StdClock::default())]
    } else {
        let built: Vec<Built> = loaded.iter().map(|(_, b)| b.clone()).collect();
        runner::run_batch(&built)
    };
    let (mut out, mut metrics, mut refer) = (a.out, a.metrics, a.reference);
    let mut code = 0;
    for ((scenario, built), result) in loaded.iter().zip(outputs) {
        let output = match result {
            Ok(o) => o,
            Err(e) => {
                eprintln!("{}: {e}", scenario.name);
                code = EXIT_RUNTIME;
                continue;
            }
        };
        let traj = pick(out.take(), scenario, &scenario.output.trajectory, ".csv");
        let met = pick(metrics.take(), scenario, &scenario.output.metrics, ".json");
        let mut written = vec![traj.clone(), met.clone()];
        let mut res = runner::save_trajectory(&traj, built, &output)
            .and_then(|_| runner::save_metrics(&met, scenario, &output));
        let ref_path = refer.take().or_else(|| {
            scenario
                .output
                .reference
                .as_ref()
                .map(|f| runner::output_path(scenario, f))
        });
        if let (Some(p), Some(samples), true) = (ref_path, &output.reference, res.is_ok()) {
            res = runner::save_reference(&p, samples);
            written.push(p);
        }
        if let Err(e) = res {
            eprintln!("{}: {e:#}", scenario.name);
            code = EXIT_RUNTIME;
            continue;
        }
        let names: Vec<_> = written.iter().map(|p| p.display().to_string()).collect();
        eprintln!("{}: {} ticks, wrote {}", scenario.name, output.metrics.ticks, names.join(", "));
        if let Some(e) = &output.abort {
            eprintln!("{}: run aborted: {e}", scenario.name);
            code = EXIT_RUNTIME;
        }
    }
    code
}

fn validate(a: ScenarioArgs) -> u8 {
    match load_all(&a.scenarios) {
        Ok(l) => {
            for (s, b) in &l {
                eprintln!("{}: ok ({} dof, {} leaves)", s.name, b.model.dof(), b.tree.leaf_nodes().len());
            }
            0
        }
        Err(c) => c,
    }
}

fn reference(a: ReferenceArgs) -> u8 {
    let (scenario, built) = match load_all(std::slice::from_ref(&a.scenario)) {
        Ok(mut l) => l.remove(0),
        Err(c) => return c,
    };
    let samples = match runner::reference(&built) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", scenario.name);
            return EXIT_RUNTIME;
        }
    };
    let path = pick(a.out, &scenario, &scenario.output.reference, "_ref.csv");
    match runner::save_reference(&path, &samples) {
        Ok(()) => {
            eprintln!("{}: {} samples, wrote {}", scenario.name, samples.len(), path.display());
            0
        }
        Err(e) => {
            eprintln!("{}: {e:#}", scenario.name);
            EXIT_RUNTIME
        }
    }
}

fn self_test(a: SelftestArgs) -> u8 {
    let report = selftest::run_all(&selftest::Options { quick: a.quick, seed: a.seed });
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if report.passed() {
        0
    } else {
        EXIT_SELFTEST
    }
}

fn presets(name: Option<String>) -> u8 {
    match name {
        None => {
            for n in pbds::presets::names() {
                println!("{n}");
            }
            0
        }
        Some(n) => match pbds::presets::preset(&n) {
            Some(text) => {
                print!("{text}");
                0
            }
            None => {
                eprintln!("no preset named {n}");
                EXIT_VALIDATION
            }
        },
    }
}
