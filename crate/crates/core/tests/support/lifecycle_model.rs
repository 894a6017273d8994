//! Model-based check of the rule lifecycle: an explicit three-state
//! automaton plus a parameter map, compared after every operation with the
//! real manager, including across simulated crashes.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use ed25519_dalek::SigningKey;
use rand::Rng;
use sre_core::lifecycle::{
    build_package, validate_package, LifecycleManager, PackageSpec, RulePackage, RuleState, StateStore,
};
use sre_core::registry::{EventLog, ThingRegistry};
use sre_core::runtime::{NotificationSink, Runtime, RuntimeConfig};
use sre_core::semantic::OntologyGraph;
use sre_core::{Scalar, VirtualClock};

pub const NAMES: [&str; 3] = ["Alpha", "Beta", "Gamma"];
pub const KEYS: [&str; 4] = ["threshold", "label", "mode", "bogus"];

#[derive(Debug, Clone)]
pub enum Op {
    Install { rule: usize, version: usize },
    Start(usize),
    Stop(usize),
    Uninstall(usize),
    SetParam { rule: usize, key: usize, value: Scalar },
    CrashAndRestore,
}

fn key() -> SigningKey {
    SigningKey::from_bytes(&[11; 32])
}

fn defaults(version: usize) -> BTreeMap<String, Option<Scalar>> {
    match version {
        0 => BTreeMap::from([
            ("threshold".to_string(), Some(Scalar::Number(600.0))),
            ("label".to_string(), None),
        ]),
        _ => BTreeMap::from([
            ("threshold".to_string(), Some(Scalar::Number(700.0))),
            ("mode".to_string(), Some(Scalar::Text("eco".into()))),
        ]),
    }
}

fn packages() -> &'static Vec<Vec<RulePackage>> {
    static PACKAGES: OnceLock<Vec<Vec<RulePackage>>> = OnceLock::new();
    PACKAGES.get_or_init(|| {
        let vk = key().verifying_key();
        NAMES
            .iter()
            .map(|name| {
                (0..2)
                    .map(|version| {
                        let script = format!(
                            "function {name}.init()\n  ready = {version}\nend\n\nfunction {name}.Tick()\n  ready = ready + 1\nend\n"
                        );
                        let spec = PackageSpec {
                            name: name.to_string(),
                            version: format!("{}.0.0", version + 1),
                            description: None,
                            params: defaults(version),
                        };
                        let bytes = build_package(&script, &spec, &key()).expect("model package");
                        validate_package(&bytes, &[vk]).expect("model package validates")
                    })
                    .collect()
            })
            .collect()
    })
}

pub fn random_value(rng: &mut impl Rng) -> Scalar {
    match rng.gen_range(0..3) {
        0 => Scalar::Number(rng.gen_range(0..1000) as f64),
        1 => Scalar::Text(["eco", "boost", "off"][rng.gen_range(0..3)].into()),
        _ => Scalar::Bool(rng.gen()),
    }
}

pub fn random_ops(rng: &mut impl Rng, max_len: usize) -> Vec<Op> {
    let len = rng.gen_range(1..=max_len);
    (0..len)
        .map(|_| {
            let rule = rng.gen_range(0..NAMES.len());
            match rng.gen_range(0..12) {
                0..=2 => Op::Install { rule, version: rng.gen_range(0..2) },
                3..=4 => Op::Start(rule),
                5..=6 => Op::Stop(rule),
                7 => Op::Uninstall(rule),
                8..=10 => Op::SetParam { rule, key: rng.gen_range(0..KEYS.len()), value: random_value(rng) },
                _ => Op::CrashAndRestore,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct ModelRule {
    state: RuleState,
    version: usize,
    params: BTreeMap<String, Option<Scalar>>,
}

#[derive(Debug, Default)]
struct Model {
    rules: BTreeMap<String, ModelRule>,
}

impl Model {
    fn apply(&mut self, op: &Op) -> Result<(), &'static str> {
        match *op {
            Op::Install { rule, version } => {
                let name = NAMES[rule].to_string();
                let fresh = defaults(version);
                let entry = match self.rules.get(&name) {
                    None => ModelRule { state: RuleState::Installed, version, params: fresh },
                    Some(old) => {
                        let params = fresh
                            .iter()
                            .map(|(k, d)| {
                                let kept = old.params.get(k).cloned().flatten().filter(|v| match d {
                                    Some(d) => d.scalar_type() == v.scalar_type(),
                                    None => true,
                                });
                                (k.clone(), kept.or(d.clone()))
                            })
                            .collect();
                        ModelRule { state: old.state, version, params }
                    }
                };
                self.rules.insert(name, entry);
                Ok(())
            }
            Op::Start(rule) => {
                let r = self.rules.get_mut(NAMES[rule]).ok_or("UnknownRule")?;
                match r.state {
                    RuleState::Started => Err("InvalidTransition"),
                    _ => {
                        r.state = RuleState::Started;
                        Ok(())
                    }
                }
            }
            Op::Stop(rule) => {
                let r = self.rules.get_mut(NAMES[rule]).ok_or("UnknownRule")?;
                match r.state {
                    RuleState::Started => {
                        r.state = RuleState::Stopped;
                        Ok(())
                    }
                    _ => Err("InvalidTransition"),
                }
            }
            Op::Uninstall(rule) => {
                let r = self.rules.get(NAMES[rule]).ok_or("UnknownRule")?;
                if r.state == RuleState::Started {
                    return Err("InvalidTransition");
                }
                self.rules.remove(NAMES[rule]);
                Ok(())
            }
            Op::SetParam { rule, key, ref value } => {
                let r = self.rules.get_mut(NAMES[rule]).ok_or("UnknownRule")?;
                let declared = defaults(r.version);
                let default = declared.get(KEYS[key]).ok_or("UnknownParam")?;
                if let Some(d) = default {
                    if d.scalar_type() != value.scalar_type() {
                        return Err("TypeMismatch");
                    }
                }
                r.params.insert(KEYS[key].to_string(), Some(value.clone()));
                Ok(())
            }
            Op::CrashAndRestore => Ok(()),
        }
    }
}

fn fresh_runtime() -> Runtime {
    let clock = Arc::new(VirtualClock::new(0));
    let registry = Arc::new(ThingRegistry::new(clock.clone(), Arc::new(EventLog::new())));
    Runtime::new(
        registry,
        Arc::new(OntologyGraph::empty()),
        clock,
        Arc::new(NotificationSink::new(16)),
        RuntimeConfig::default(),
    )
}

fn boot(dir: &std::path::Path) -> Result<(LifecycleManager, Runtime), String> {
    let store = StateStore::open(dir).map_err(|e| e.to_string())?;
    let mut manager = LifecycleManager::new(store, vec![key().verifying_key()]);
    let mut runtime = fresh_runtime();
    manager.restore(&mut runtime).map_err(|e| e.to_string())?;
    Ok((manager, runtime))
}

fn compare(step: usize, model: &Model, manager: &LifecycleManager, runtime: &Runtime) -> Result<(), String> {
    let actual: BTreeMap<String, (RuleState, String, BTreeMap<String, Option<Scalar>>)> = manager
        .records()
        .into_iter()
        .map(|r| (r.name.clone(), (r.state, r.version.clone(), r.params.clone())))
        .collect();
    let expected: BTreeMap<String, (RuleState, String, BTreeMap<String, Option<Scalar>>)> = model
        .rules
        .iter()
        .map(|(n, r)| (n.clone(), (r.state, format!("{}.0.0", r.version + 1), r.params.clone())))
        .collect();
    if actual != expected {
        return Err(format!("step {step}: records {actual:?} != model {expected:?}"));
    }
    for name in NAMES {
        let should_run = model.rules.get(name).is_some_and(|r| r.state == RuleState::Started);
        if runtime.is_running(name) != should_run {
            return Err(format!("step {step}: {name} running={} but model says {should_run}", runtime.is_running(name)));
        }
        if let Some(r) = model.rules.get(name) {
            for (k, v) in &r.params {
                if runtime.setting(name, k) != v.as_ref() {
                    return Err(format!("step {step}: {name}.{k} setting {:?} != {v:?}", runtime.setting(name, k)));
                }
            }
        }
    }
    Ok(())
}

/// Runs `ops` against a real manager in a fresh state directory and the
/// model side by side. A crash drops the manager and runtime without any
/// shutdown, leaves a half-written temp file behind and boots again.
pub fn check(ops: &[Op]) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pkgs = packages();
    let mut model = Model::default();
    let (mut manager, mut runtime) = boot(dir.path())?;
    for (step, op) in ops.iter().enumerate() {
        let expected = model.apply(op);
        let actual: Result<(), String> = match op {
            Op::Install { rule, version } => manager
                .install(&mut runtime, pkgs[*rule][*version].clone())
                .map(|_| ())
                .map_err(|e| e.code().to_string()),
            Op::Start(rule) => manager.start(&mut runtime, NAMES[*rule]).map(|_| ()).map_err(|e| e.code().to_string()),
            Op::Stop(rule) => manager.stop(&mut runtime, NAMES[*rule]).map(|_| ()).map_err(|e| e.code().to_string()),
            Op::Uninstall(rule) => manager.uninstall(&mut runtime, NAMES[*rule]).map_err(|e| e.code().to_string()),
            Op::SetParam { rule, key, value } => manager
                .set_param(&mut runtime, NAMES[*rule], KEYS[*key], value.clone())
                .map(|_| ())
                .map_err(|e| e.code().to_string()),
            Op::CrashAndRestore => {
                drop(manager);
                drop(runtime);
                std::fs::write(dir.path().join("state.tmp"), b"{\"half\": ").map_err(|e| e.to_string())?;
                let booted = boot(dir.path())?;
                manager = booted.0;
                runtime = booted.1;
                Ok(())
            }
        };
        let expected = expected.map_err(|c| c.to_string());
        if actual != expected {
            return Err(format!("step {step} {op:?}: got {actual:?}, model expects {expected:?}"));
        }
        compare(step, &model, &manager, &runtime)?;
    }
    // a final reboot must reproduce the last acknowledged state
    drop(manager);
    drop(runtime);
    let (manager, runtime) = boot(dir.path())?;
    compare(ops.len(), &model, &manager, &runtime)
}
