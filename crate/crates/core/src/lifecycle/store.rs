use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleState {
    Installed,
    Started,
    Stopped,
}

impl std::fmt::Display for RuleState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

/// Persisted state of one installed rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub name: String,
    pub state: RuleState,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Current parameter values; `null` for declared parameters with no value.
    pub params: BTreeMap<String, Option<Scalar>>,
    /// Package location relative to the state directory.
    pub package_path: String,
    /// Installation order; rules are restored and dispatched in this order.
    pub seq: u64,
}

/// The on-disk `state.json` plus the `rules/` package directory.
#[derive(Debug, Clone)]
pub struct StateStore {
    dir: PathBuf,
}

pub const STATE_FILE: &str = "state.json";
pub const RULES_DIR: &str = "rules";

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(parent) = path.parent() {
        // directory fsync is best effort; not every filesystem supports it
        if let Ok(d) = File::open(parent) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

impl StateStore {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(dir.join(RULES_DIR))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn package_rel_path(name: &str) -> String {
        format!("{RULES_DIR}/{name}.zip")
    }

    /// Loads all records. A missing state file means no rules.
    pub fn load(&self) -> std::io::Result<BTreeMap<String, RuleRecord>> {
        let path = self.dir.join(STATE_FILE);
        let text = match fs::read(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
            Err(e) => return Err(e),
        };
        serde_json::from_slice(&text).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))
        })
    }

    /// Replaces `state.json` atomically.
    pub fn save(&self, records: &BTreeMap<String, RuleRecord>) -> std::io::Result<()> {
        let json = serde_json::to_vec_pretty(records).expect("records serialize");
        write_atomic(&self.dir.join(STATE_FILE), &json)
    }

    pub fn write_package(&self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.dir.join(Self::package_rel_path(name)), bytes)
    }

    pub fn read_package(&self, rel_path: &str) -> std::io::Result<Vec<u8>> {
        fs::read(self.dir.join(rel_path))
    }

    pub fn remove_package(&self, name: &str) -> std::io::Result<()> {
        match fs::remove_file(self.dir.join(Self::package_rel_path(name))) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }
}
