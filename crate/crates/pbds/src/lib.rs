//! Scenario files, trajectory logging, verification oracles and the batch
//! runner around `pbds-core`.

pub mod io;
pub mod oracle;
pub mod presets;
pub mod runner;
pub mod scenario;
pub mod selftest;

pub use scenario::{parse_scenario, Built, Issue, Scenario, ScenarioError};
