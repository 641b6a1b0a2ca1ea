//! Operator service for the campus access system: the `/v1` HTTP API with
//! its live event stream, and a deterministic scenario runner for headless
//! simulation of a whole site.

pub mod api;
mod error;
pub mod query;
pub mod runner;
pub mod scenario;
pub mod service;
pub mod site;

pub use api::router;
pub use error::ApiError;
pub use query::ReportFlags;
pub use runner::{run_scenario, run_scenario_file, scenario_key, Decision, RunOutcome};
pub use scenario::{Scenario, ScenarioError};
pub use service::{Clock, ManualClock, Service, StreamItem, SystemClock};
pub use site::{Read, Registration, Site};
