//! Gateway daemon for the semantic rules engine.
//!
//! [`Gateway`] serves the management API over HTTP:
//!
//! | method | path | success |
//! |---|---|---|
//! | POST | `/rules` (package ZIP body) | 201 + record |
//! | GET | `/rules`, `/rules/{name}` | 200 |
//! | POST | `/rules/{name}/start`, `/rules/{name}/stop` | 200 + record |
//! | DELETE | `/rules/{name}` | 204 |
//! | PUT | `/rules/{name}/params/{key}` (JSON scalar body) | 200 + record |
//! | POST | `/query` (`{"q": text}`) | 200 + result |
//! | GET | `/things`, `/things/{id}` | 200 |
//! | GET | `/events` | server-sent events |
//!
//! Failures carry a JSON problem document `{code, message, detail}`.

pub mod cli;
pub mod client;
pub mod config;
pub mod problem;
pub mod server;

pub use client::{Client, ClientError, EventStream};
pub use config::{ClockMode, ConfigError, GatewayConfig};
pub use problem::{ApiError, Problem};
pub use server::{build_engine, router, Gateway, InstallView, StartError};
