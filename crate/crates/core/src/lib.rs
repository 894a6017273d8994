//! Core of the semantic rules engine: thing registry, ontology and semantic
//! queries, the RuleScript and condition languages, the rule runtime and the
//! package lifecycle.

pub mod clock;
pub mod dsl;
pub mod engine;
pub mod lifecycle;
pub mod registry;
pub mod runtime;
pub mod scalar;
pub mod semantic;

pub use clock::{Clock, VirtualClock, WallClock};
pub use engine::{Core, Engine, EngineEvent, EngineOptions};
pub use scalar::{Scalar, ScalarType};
