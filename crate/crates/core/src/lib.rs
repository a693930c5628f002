//! Simulator for fault protection of an N-phase traction inverter.
//!
//! A switched plant (DC source, DC-link capacitor, inverter legs, RL load with
//! back-EMF) is integrated at a fixed electrical step while detectors,
//! a protection state machine and a discharge limiter run at slower rates.
//! Faults are scheduled declaratively and every run reports detection and
//! isolation times, discharge and thermal behaviour, availability and an
//! efficiency score.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuit;
pub mod config;
pub mod detection;
pub mod discharge;
pub mod engine;
pub mod faults;
pub mod metrics;
pub mod noise;
pub mod protection;
pub mod report;
pub mod scenario;
pub mod sweep;
pub mod thermal;

pub use config::SimConfig;
pub use engine::{run_scenario, EngineError, RunOutput, Scenario, Trace};
pub use metrics::MetricsReport;
pub use scenario::{parse_scenario, ScenarioFile};
