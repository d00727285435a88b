//! Loading scenarios, running them (alone or as a parallel batch) and
//! writing their outputs.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pbds_core::pbds::TaskRole;
use pbds_core::sim::{reference_rollout, run_closed_loop, Clock, ReferenceSample, RunOutput};
use pbds_core::DsState;

use crate::io::{write_metrics, write_reference, write_trajectory, MetricsDocument};
use crate::presets;
use crate::scenario::{parse_scenario, Built, Scenario, ScenarioError};

/// Environment variable overriding the output directory.
pub const OUTPUT_DIR_ENV: &str = "PBDS_OUTPUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
}

/// Wall-clock time since construction.
pub struct StdClock(Instant);

impl Default for StdClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for StdClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Reads a scenario from a file, falling back to a shipped preset of the
/// same stem when no such file exists.
pub fn load(spec: &str) -> Result<(Scenario, Built), LoadError> {
    let path = Path::new(spec);
    let text = if path.exists() {
        std::fs::read_to_string(path).map_err(|source| LoadError::Read {
            path: spec.to_string(),
            source,
        })?
    } else {
        let stem = path.file_name().and_then(|s| s.to_str()).unwrap_or(spec);
        match presets::preset(stem) {
            Some(t) => t.to_string(),
            None => {
                return Err(LoadError::Read {
                    path: spec.to_string(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or preset"),
                })
            }
        }
    };
    load_str(&text)
}

pub fn load_str(text: &str) -> Result<(Scenario, Built), LoadError> {
    let scenario = parse_scenario(text)?;
    let built = scenario
        .build()
        .map_err(|issues| LoadError::Scenario(ScenarioError::Invalid(issues)))?;
    Ok((scenario, built))
}

pub fn run(built: &Built, clock: &dyn Clock) -> pbds_core::Result<RunOutput> {
    run_closed_loop(
        &built.model,
        &built.tree,
        &built.controller,
        &built.sim,
        &built.init,
        &built.options,
        clock,
    )
}

/// Runs independent scenarios on separate threads; results keep input order.
pub fn run_batch(items: &[Built]) -> Vec<pbds_core::Result<RunOutput>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .iter()
            .map(|b| s.spawn(move || run(b, &StdClock::default())))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    })
}

/// Rollout of the tracked node's subtree from the task state the robot's
/// initial configuration maps to.
pub fn reference(built: &Built) -> pbds_core::Result<Vec<ReferenceSample>> {
    let name = built.options.tracked_node.as_deref().ok_or_else(|| {
        pbds_core::Error::InvalidParameter("scenario has no metrics.tracked_node to roll out".into())
    })?;
    let base = DsState::new(built.init.q.clone(), built.init.qd.clone());
    let res = built.tree.resolve_detailed(&base)?;
    let init = res
        .node(name)
        .ok_or_else(|| pbds_core::Error::InvalidParameter(format!("no task node named {name}")))?
        .state
        .clone();
    let node = built.tree.find(name).expect("tracked node validated at build time");
    reference_rollout(&node.task_space_field(built.tree.regularization), &init, &built.sim)
}

pub fn obstacle_count(built: &Built) -> usize {
    built
        .tree
        .leaf_nodes()
        .iter()
        .filter(|n| n.role == TaskRole::Obstacle)
        .count()
}

/// Places `file` under the override directory, else the scenario's
/// `output.dir`, unless it is absolute.
pub fn output_path(scenario: &Scenario, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
        return Path::new(&dir).join(p);
    }
    match &scenario.output.dir {
        Some(dir) => Path::new(dir).join(p),
        None => p.to_path_buf(),
    }
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn save_trajectory(path: &Path, built: &Built, out: &RunOutput) -> anyhow::Result<()> {
    write_trajectory(create(path)?, &out.records, obstacle_count(built))?;
    Ok(())
}

pub fn save_metrics(path: &Path, scenario: &Scenario, out: &RunOutput) -> anyhow::Result<()> {
    write_metrics(create(path)?, &MetricsDocument::new(&scenario.name, &out.metrics))?;
    Ok(())
}

pub fn save_reference(path: &Path, samples: &[ReferenceSample]) -> anyhow::Result<()> {
    write_reference(create(path)?, samples)?;
    Ok(())
}
