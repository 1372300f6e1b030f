//! Security framework for software-defined IoT networks: a seeded
//! network simulator, an OpenFlow-like southbound protocol, the gateway
//! controller with its security modules, and a scenario engine.

pub mod ecc;
pub mod hash;
pub mod simnet;
pub mod southbound;
pub mod keymgmt;
pub mod privacy;
pub mod authn;
pub mod trust;
pub mod abac;
pub mod audit;
pub mod mitigation;
pub mod gateway;
pub mod scenarios;

pub use audit::AuditLog;
pub use ecc::{Curve, CurvePoint, CurveProfile, KeyPair};
pub use gateway::{Controller, GatewayConfig, Module, ModuleSet};
pub use scenarios::{
    coverage, matrix_suite, parse_scenario, run_scenario, Grid, Outcome, RunOutput, RunReport, ScenarioError,
    ScenarioSpec,
};
pub use simnet::{NodeId, Port, Tick};
pub use southbound::{FlowKey, FlowMatch, MsgType, Packet};
