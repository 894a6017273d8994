//! Scenario drivers and independent oracles shared by the integration tests
//! and the acceptance run.
#![allow(dead_code)]

pub mod conditions;
pub mod golden;
pub mod inference;
pub mod lifecycle_model;
pub mod parser;
pub mod security;
