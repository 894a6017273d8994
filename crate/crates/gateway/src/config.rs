use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use ed25519_dalek::VerifyingKey;
use serde::{Deserialize, Serialize};
use sre_core::lifecycle::parse_public_key;
use thiserror::Error;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8640";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    /// Milliseconds since the UNIX epoch.
    #[default]
    Wall,
    /// Milliseconds since gateway start.
    Virtual,
}

/// Gateway configuration file. Relative paths are resolved against the
/// directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub commissioning: PathBuf,
    pub ontology: PathBuf,
    /// Base64 or PEM public keys allowed to sign rule packages.
    #[serde(default)]
    pub trusted_keys: Vec<String>,
    pub state_dir: PathBuf,
    #[serde(default)]
    pub clock: ClockMode,
    /// JSON-lines file that receives every notification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notification_sink: Option<PathBuf>,
    /// Directory served under `/ui`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub rule_installation: bool,
    #[serde(default = "default_heartbeat")]
    pub heartbeat_ms: u64,
}

fn default_listen() -> SocketAddr {
    DEFAULT_LISTEN.parse().expect("valid default address")
}

fn yes() -> bool {
    true
}

fn default_heartbeat() -> u64 {
    15_000
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{what} not found: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("invalid trusted key #{index}: {message}")]
    BadKey { index: usize, message: String },
    #[error("rule installation is enabled but no trusted key is configured")]
    NoTrustedKey,
}

impl GatewayConfig {
    pub fn new(commissioning: impl Into<PathBuf>, ontology: impl Into<PathBuf>, state_dir: impl Into<PathBuf>) -> Self {
        Self {
            listen: default_listen(),
            commissioning: commissioning.into(),
            ontology: ontology.into(),
            trusted_keys: Vec::new(),
            state_dir: state_dir.into(),
            clock: ClockMode::Wall,
            notification_sink: None,
            ui_dir: None,
            rule_installation: true,
            heartbeat_ms: default_heartbeat(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        let mut cfg: GatewayConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.commissioning);
        fix(&mut self.ontology);
        fix(&mut self.state_dir);
        if let Some(p) = self.notification_sink.as_mut() {
            fix(p);
        }
        if let Some(p) = self.ui_dir.as_mut() {
            fix(p);
        }
    }

    /// Checks that input files exist and decodes the trusted keys.
    pub fn validate(&self) -> Result<Vec<VerifyingKey>, ConfigError> {
        for (what, path) in [("commissioning file", &self.commissioning), ("ontology file", &self.ontology)] {
            if !path.is_file() {
                return Err(ConfigError::MissingPath { what, path: path.clone() });
            }
        }
        if let Some(ui) = &self.ui_dir {
            if !ui.is_dir() {
                return Err(ConfigError::MissingPath { what: "ui directory", path: ui.clone() });
            }
        }
        let keys = self
            .trusted_keys
            .iter()
            .enumerate()
            .map(|(index, k)| parse_public_key(k).map_err(|message| ConfigError::BadKey { index, message }))
            .collect::<Result<Vec<_>, _>>()?;
        if self.rule_installation && keys.is_empty() {
            return Err(ConfigError::NoTrustedKey);
        }
        Ok(keys)
    }
}
