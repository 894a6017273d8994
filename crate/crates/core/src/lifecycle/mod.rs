//! Rule lifecycle: package validation, the install/start/stop/uninstall
//! state machine, settable parameters and persistence across restarts.

mod package;
mod store;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use ed25519_dalek::VerifyingKey;
use thiserror::Error;

use crate::dsl::RuleScript;
use crate::runtime::{Runtime, RuntimeError};
use crate::scalar::{Scalar, ScalarType};

pub use package::{
    build_package, encode_public_key, encode_zip, parse_public_key, parse_signing_key, read_entries,
    validate_package, Manifest, PackageError, PackageSpec, RulePackage, MANIFEST_ENTRY, SIGNATURE_ENTRY,
};
pub use store::{RuleRecord, RuleState, StateStore, RULES_DIR, STATE_FILE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LifecycleError {
    #[error(transparent)]
    Package(#[from] PackageError),
    #[error("unknown rule '{0}'")]
    UnknownRule(String),
    #[error("cannot {action} rule '{rule}' while it is {state}")]
    InvalidTransition {
        rule: String,
        state: RuleState,
        action: &'static str,
    },
    #[error("rule '{rule}' declares no parameter '{key}'")]
    UnknownParam { rule: String, key: String },
    #[error("parameter '{key}' of rule '{rule}' is a {expected}, not a {found}")]
    TypeMismatch {
        rule: String,
        key: String,
        expected: ScalarType,
        found: ScalarType,
    },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("storage error: {0}")]
    Storage(String),
}

impl LifecycleError {
    pub fn code(&self) -> &'static str {
        match self {
            LifecycleError::Package(e) => e.code(),
            LifecycleError::UnknownRule(_) => "UnknownRule",
            LifecycleError::InvalidTransition { .. } => "InvalidTransition",
            LifecycleError::UnknownParam { .. } => "UnknownParam",
            LifecycleError::TypeMismatch { .. } => "TypeMismatch",
            LifecycleError::Runtime(e) => e.code(),
            LifecycleError::Storage(_) => "StorageError",
        }
    }
}

fn storage(e: std::io::Error) -> LifecycleError {
    LifecycleError::Storage(e.to_string())
}

/// What the lifecycle manager needs from the rule runtime.
pub trait RuleHost {
    fn declare(&mut self, name: &str);
    fn start(&mut self, name: &str, script: Arc<RuleScript>, order: u64) -> Result<(), RuntimeError>;
    fn stop(&mut self, name: &str);
    fn forget(&mut self, name: &str);
    fn set_settings(&mut self, name: &str, settings: BTreeMap<String, Scalar>);
}

impl RuleHost for Runtime {
    fn declare(&mut self, name: &str) {
        self.declare_rule(name);
    }

    fn start(&mut self, name: &str, script: Arc<RuleScript>, order: u64) -> Result<(), RuntimeError> {
        self.start_rule(name, script, order)
    }

    fn stop(&mut self, name: &str) {
        self.stop_rule(name);
    }

    fn forget(&mut self, name: &str) {
        self.forget_rule(name);
    }

    fn set_settings(&mut self, name: &str, settings: BTreeMap<String, Scalar>) {
        Runtime::set_settings(self, name, settings);
    }
}

struct Loaded {
    script: Arc<RuleScript>,
    defaults: BTreeMap<String, Option<Scalar>>,
}

fn settings_of(record: &RuleRecord) -> BTreeMap<String, Scalar> {
    record
        .params
        .iter()
        .filter_map(|(k, v)| v.clone().map(|v| (k.clone(), v)))
        .collect()
}

/// Result of an install.
#[derive(Debug, Clone, PartialEq)]
pub struct InstallOutcome {
    pub record: RuleRecord,
    /// True when an existing rule was replaced.
    pub updated: bool,
}

/// Owns rule records and their packages. Every acknowledged mutation is
/// persisted before the method returns.
pub struct LifecycleManager {
    store: StateStore,
    trusted: Vec<VerifyingKey>,
    records: BTreeMap<String, RuleRecord>,
    loaded: HashMap<String, Loaded>,
    next_seq: u64,
}

impl LifecycleManager {
    pub fn new(store: StateStore, trusted: Vec<VerifyingKey>) -> Self {
        Self {
            store,
            trusted,
            records: BTreeMap::new(),
            loaded: HashMap::new(),
            next_seq: 1,
        }
    }

    pub fn trusted_keys(&self) -> &[VerifyingKey] {
        &self.trusted
    }

    pub fn store(&self) -> &StateStore {
        &self.store
    }

    pub fn validate(&self, bytes: &[u8]) -> Result<RulePackage, PackageError> {
        validate_package(bytes, &self.trusted)
    }

    /// Records in installation order.
    pub fn records(&self) -> Vec<RuleRecord> {
        let mut v: Vec<RuleRecord> = self.records.values().cloned().collect();
        v.sort_by_key(|r| r.seq);
        v
    }

    pub fn record(&self, name: &str) -> Option<&RuleRecord> {
        self.records.get(name)
    }

    pub fn script(&self, name: &str) -> Option<Arc<RuleScript>> {
        self.loaded.get(name).map(|l| l.script.clone())
    }

    fn persist(&self) -> Result<(), LifecycleError> {
        self.store.save(&self.records).map_err(storage)
    }

    fn get(&self, name: &str) -> Result<&RuleRecord, LifecycleError> {
        self.records
            .get(name)
            .ok_or_else(|| LifecycleError::UnknownRule(name.to_owned()))
    }

    fn set_state(&mut self, name: &str, state: RuleState) -> Result<RuleRecord, LifecycleError> {
        let rec = self.records.get_mut(name).expect("record exists");
        rec.state = state;
        let rec = rec.clone();
        self.persist()?;
        Ok(rec)
    }

    /// Installs a validated package. Reinstalling an existing rule replaces
    /// it in place: a started rule is stopped, swapped and restarted, and
    /// parameter values whose key and type still fit the new manifest are
    /// kept.
    pub fn install(&mut self, host: &mut dyn RuleHost, pkg: RulePackage) -> Result<InstallOutcome, LifecycleError> {
        let name = pkg.manifest.name.clone();
        let defaults = pkg.manifest.params.clone();
        self.store.write_package(&name, &pkg.bytes).map_err(storage)?;
        let previous = self.records.get(&name).cloned();
        let updated = previous.is_some();
        let record = match &previous {
            Some(old) => {
                if old.state == RuleState::Started {
                    host.stop(&name);
                }
                let params = defaults
                    .iter()
                    .map(|(k, default)| {
                        let kept = old.params.get(k).cloned().flatten().filter(|v| match default {
                            Some(d) => d.scalar_type() == v.scalar_type(),
                            None => true,
                        });
                        (k.clone(), kept.or_else(|| default.clone()))
                    })
                    .collect();
                RuleRecord {
                    name: name.clone(),
                    state: old.state,
                    version: pkg.manifest.version.clone(),
                    description: pkg.manifest.description.clone(),
                    params,
                    package_path: StateStore::package_rel_path(&name),
                    seq: old.seq,
                }
            }
            None => {
                let seq = self.next_seq;
                self.next_seq += 1;
                RuleRecord {
                    name: name.clone(),
                    state: RuleState::Installed,
                    version: pkg.manifest.version.clone(),
                    description: pkg.manifest.description.clone(),
                    params: defaults.clone(),
                    package_path: StateStore::package_rel_path(&name),
                    seq,
                }
            }
        };
        self.loaded.insert(
            name.clone(),
            Loaded {
                script: pkg.script.clone(),
                defaults,
            },
        );
        host.declare(&name);
        host.set_settings(&name, settings_of(&record));
        self.records.insert(name.clone(), record.clone());
        self.persist()?;
        if record.state == RuleState::Started {
            if let Err(e) = host.start(&name, pkg.script, record.seq) {
                self.set_state(&name, RuleState::Stopped)?;
                return Err(e.into());
            }
        }
        Ok(InstallOutcome { record, updated })
    }

    pub fn start(&mut self, host: &mut dyn RuleHost, name: &str) -> Result<RuleRecord, LifecycleError> {
        let rec = self.get(name)?;
        if rec.state == RuleState::Started {
            return Err(LifecycleError::InvalidTransition {
                rule: name.to_owned(),
                state: rec.state,
                action: "start",
            });
        }
        let seq = rec.seq;
        let script = self.loaded[name].script.clone();
        if let Err(e) = host.start(name, script, seq) {
            self.set_state(name, RuleState::Stopped)?;
            return Err(e.into());
        }
        self.set_state(name, RuleState::Started)
    }

    pub fn stop(&mut self, host: &mut dyn RuleHost, name: &str) -> Result<RuleRecord, LifecycleError> {
        let rec = self.get(name)?;
        if rec.state != RuleState::Started {
            return Err(LifecycleError::InvalidTransition {
                rule: name.to_owned(),
                state: rec.state,
                action: "stop",
            });
        }
        host.stop(name);
        self.set_state(name, RuleState::Stopped)
    }

    /// Removes a rule that is not running.
    pub fn uninstall(&mut self, host: &mut dyn RuleHost, name: &str) -> Result<(), LifecycleError> {
        let rec = self.get(name)?;
        if rec.state == RuleState::Started {
            return Err(LifecycleError::InvalidTransition {
                rule: name.to_owned(),
                state: rec.state,
                action: "uninstall",
            });
        }
        let removed = self.records.remove(name);
        if let Err(e) = self.persist() {
            if let Some(r) = removed {
                self.records.insert(name.to_owned(), r);
            }
            return Err(e);
        }
        self.loaded.remove(name);
        host.forget(name);
        if let Err(e) = self.store.remove_package(name) {
            tracing::warn!(rule = name, "could not delete package file: {e}");
        }
        Ok(())
    }

    /// Sets a declared parameter. The value must have the type of the
    /// manifest default unless that default is `null`.
    pub fn set_param(
        &mut self,
        host: &mut dyn RuleHost,
        name: &str,
        key: &str,
        value: Scalar,
    ) -> Result<RuleRecord, LifecycleError> {
        self.get(name)?;
        let loaded = &self.loaded[name];
        let Some(default) = loaded.defaults.get(key) else {
            return Err(LifecycleError::UnknownParam {
                rule: name.to_owned(),
                key: key.to_owned(),
            });
        };
        if let Some(d) = default {
            if d.scalar_type() != value.scalar_type() {
                return Err(LifecycleError::TypeMismatch {
                    rule: name.to_owned(),
                    key: key.to_owned(),
                    expected: d.scalar_type(),
                    found: value.scalar_type(),
                });
            }
        }
        let rec = self.records.get_mut(name).expect("checked above");
        let old = rec.params.insert(key.to_owned(), Some(value));
        if let Err(e) = self.persist() {
            let rec = self.records.get_mut(name).expect("checked above");
            rec.params.insert(key.to_owned(), old.flatten());
            return Err(e);
        }
        let rec = self.records[name].clone();
        host.set_settings(name, settings_of(&rec));
        Ok(rec)
    }

    /// Reloads every persisted rule, re-validating its package. Rules whose
    /// package is missing or fails validation are skipped and logged; rules
    /// persisted as Started are started again. Returns how many rules were
    /// restored.
    pub fn restore(&mut self, host: &mut dyn RuleHost) -> Result<usize, LifecycleError> {
        let persisted = self.store.load().map_err(storage)?;
        let mut ordered: Vec<RuleRecord> = persisted.into_values().collect();
        ordered.sort_by_key(|r| r.seq);
        let mut restored = 0;
        for mut rec in ordered {
            self.next_seq = self.next_seq.max(rec.seq + 1);
            let pkg = match self
                .store
                .read_package(&rec.package_path)
                .map_err(|e| e.to_string())
                .and_then(|bytes| self.validate(&bytes).map_err(|e| format!("{}: {e}", e.code())))
            {
                Ok(p) if p.manifest.name == rec.name => p,
                Ok(p) => {
                    tracing::error!(rule = %rec.name, "package holds rule '{}', skipping", p.manifest.name);
                    continue;
                }
                Err(e) => {
                    tracing::error!(rule = %rec.name, "skipping rule on restore: {e}");
                    continue;
                }
            };
            self.loaded.insert(
                rec.name.clone(),
                Loaded {
                    script: pkg.script.clone(),
                    defaults: pkg.manifest.params.clone(),
                },
            );
            host.declare(&rec.name);
            host.set_settings(&rec.name, settings_of(&rec));
            if rec.state == RuleState::Started {
                if let Err(e) = host.start(&rec.name, pkg.script.clone(), rec.seq) {
                    tracing::error!(rule = %rec.name, "restart failed: {e}");
                    rec.state = RuleState::Stopped;
                }
            }
            self.records.insert(rec.name.clone(), rec);
            restored += 1;
        }
        Ok(restored)
    }
}
