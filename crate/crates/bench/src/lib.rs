//! Deterministic device-fabric simulator and the RET, RLT and RMU
//! benchmarks for the semantic rules engine.
//!
//! * RET: time to evaluate and execute `n` always-true rules for one event.
//! * RLT: delay between a sensor event entering the work queue and the entry
//!   of the rule callback it triggers, under a steady event rate.
//! * RMU: memory held by the engine for `n` installed and started rules.

pub mod alloc;
mod harness;
mod report;
pub mod scenario;
mod testbed;

use thiserror::Error;

pub use harness::{
    rlt_callback_log, run_ret, run_rlt, run_rmu, MemorySource, RetConfig, RltConfig, RmuConfig,
};
pub use report::{BenchReport, Cell, Metric, Summary, CSV_HEADER};
pub use scenario::{generate_fixture, Fixture, Room, Scenario, TraceGen, ValueProcess};
pub use testbed::{comfort_rule, ret_rule, Testbed};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("bad scenario: {0}")]
    BadScenario(String),
    #[error("engine error: {0}")]
    Engine(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl BenchError {
    pub fn code(&self) -> &'static str {
        match self {
            BenchError::BadScenario(_) => "BadScenario",
            BenchError::Engine(_) => "EngineError",
            BenchError::Io(_) => "IoError",
        }
    }
}
