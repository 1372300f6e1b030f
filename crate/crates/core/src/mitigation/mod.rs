//! Monitoring agent, audit trail, threshold flow analyser for the six
//! attack classes, and countermeasure dispatch.

mod countermeasure;
mod detector;

use thiserror::Error;

pub use countermeasure::{CmAction, Countermeasure, Dispatcher};
pub use detector::{Alert, AlertKind, AlertSubject, Detector, DetectorConfig, Evidence, FlowEvent};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MitigationError {
    #[error("detector configuration: {0}")]
    Config(String),
}
