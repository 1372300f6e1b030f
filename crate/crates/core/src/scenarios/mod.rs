//! Scenario files, the engine that plays them on the simulated network,
//! run reports and the threat coverage matrix.

mod coverage;
mod device;
mod engine;
mod library;
mod matrix;
mod report;
mod spec;

use thiserror::Error;

pub use coverage::{coverage, marked_cells, FLAGGED, THREATS};
pub use device::{auth_request, data_frame, DeviceKeys};
pub use engine::{run_scenario, Engine, RunOutput};
pub use library::{library_scenario, LIBRARY};
pub use matrix::{judge, matrix_suite, matrix_with, plan, CellMode, CellPlan, CellResult, CellStatus, Grid, RunSummary};
pub use report::{AlertRow, AttackOutcome, CountermeasureRow, Outcome, RunReport, SinkSummary, TrustRow};
pub use spec::{parse_scenario, SCENARIO_TRUST_PRIOR, AttackKind, AttackSpec, PolicySpec, PolicyTarget, ScenarioSpec, TrafficSpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {field}: {msg}")]
    Parse { line: usize, field: String, msg: String },
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ScenarioError {
    fn from(e: std::io::Error) -> Self {
        ScenarioError::Io(e.to_string())
    }
}
