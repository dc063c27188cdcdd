//! Scenario files, the experiment runner, presets and reports.

pub mod apps;
pub mod presets;
pub mod report;
pub mod runner;
pub mod scenario;

pub use presets::{preset, UnknownPreset, PRESETS};
pub use runner::{run_scenario, run_scenario_with, FlowStats, NoObserver, Observer, RunError, RunOutput};
pub use scenario::{Scenario, ScenarioError};
