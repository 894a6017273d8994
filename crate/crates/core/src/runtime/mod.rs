//! Rule runtime: per-rule environments, timers, subscriptions and the
//! interpreter that runs RuleScript callbacks one at a time.

mod interp;
mod notify;
mod queue;
mod trigger;
mod value;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::clock::Clock;
use crate::dsl::{ConditionExpr, RuleScript};
use crate::registry::{Event, EventKind, ThingRegistry};
use crate::scalar::Scalar;
use crate::semantic::{match_tags, FilterExpr, OntologyGraph};

pub use notify::{Notification, NotificationSink};
pub use queue::WorkQueue;
pub use trigger::{evaluate_condition, is_relevant, term_is_relevant};
pub use value::{CapabilityRef, Value};

/// Error raised while running rule code.
///
/// `code` names the failure class (`RuntimeError`, `UnknownFunction`,
/// `CallDepthExceeded`, `NotWritable`, ...). `line` is 0 when the error did
/// not come from a statement.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{code} in {rule}:{line}: {message}")]
pub struct RuntimeError {
    pub code: &'static str,
    pub rule: String,
    pub line: u32,
    pub message: String,
}

impl RuntimeError {
    pub fn new(code: &'static str, rule: &str, message: impl Into<String>) -> Self {
        Self {
            code,
            rule: rule.to_owned(),
            line: 0,
            message: message.into(),
        }
    }

    pub fn code(&self) -> &'static str {
        self.code
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeConfig {
    /// Statements and loop iterations allowed per dispatched item.
    pub step_budget: u64,
    /// Maximum nesting of `engine.call`.
    pub max_call_depth: usize,
    /// Maximum nesting of function calls of any kind.
    pub max_frames: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            step_budget: 100_000,
            max_call_depth: 8,
            max_frames: 32,
        }
    }
}

struct RuleEnv {
    script: Arc<RuleScript>,
    globals: HashMap<String, Value>,
    generation: u64,
    order: u64,
}

/// A timer as registered by `engine.timer`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimerInfo {
    pub id: u64,
    pub owner: String,
    pub function: String,
    pub initial_delay: u64,
    pub period: u64,
    /// -1 for unbounded timers.
    pub count: i64,
    pub next_due: u64,
    pub fires_remaining: Option<u64>,
}

#[derive(Debug, Clone)]
struct TimerSpec {
    info: TimerInfo,
    generation: u64,
}

/// A due timer, to be run through the work queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimerFire {
    pub timer: u64,
    pub owner: String,
    pub generation: u64,
    pub function: String,
    pub due: u64,
}

#[derive(Debug, Clone)]
enum Trigger {
    Condition(ConditionExpr),
    Query(FilterExpr),
}

#[derive(Debug)]
struct Subscription {
    owner: String,
    trigger: Trigger,
    callback: String,
}

type CallbackProbe = Arc<dyn Fn(&str, Option<Instant>) + Send + Sync>;
type ErrorHook = Arc<dyn Fn(&RuntimeError) + Send + Sync>;

const ERROR_HISTORY: usize = 256;

/// Owns every running rule. All methods are meant to be called from the
/// single scheduler thread.
pub struct Runtime {
    registry: Arc<ThingRegistry>,
    ontology: Arc<OntologyGraph>,
    clock: Arc<dyn Clock>,
    notifications: Arc<NotificationSink>,
    config: RuntimeConfig,
    rules: HashMap<String, RuleEnv>,
    stopped: HashSet<String>,
    settings: HashMap<String, BTreeMap<String, Scalar>>,
    timers: BTreeMap<(u64, u64), TimerSpec>,
    next_timer: u64,
    /// Keyed by (rule order, subscription id) so iteration follows rule
    /// installation order.
    subs: BTreeMap<(u64, u64), Arc<Subscription>>,
    sub_keys: HashMap<u64, (u64, u64)>,
    by_thing: HashMap<String, BTreeSet<(u64, u64)>>,
    semantic: BTreeSet<(u64, u64)>,
    next_sub: u64,
    next_generation: u64,
    errors: VecDeque<RuntimeError>,
    probe: Option<CallbackProbe>,
    error_hook: Option<ErrorHook>,
}

impl Runtime {
    pub fn new(
        registry: Arc<ThingRegistry>,
        ontology: Arc<OntologyGraph>,
        clock: Arc<dyn Clock>,
        notifications: Arc<NotificationSink>,
        config: RuntimeConfig,
    ) -> Self {
        Self {
            registry,
            ontology,
            clock,
            notifications,
            config,
            rules: HashMap::new(),
            stopped: HashSet::new(),
            settings: HashMap::new(),
            timers: BTreeMap::new(),
            next_timer: 1,
            subs: BTreeMap::new(),
            sub_keys: HashMap::new(),
            by_thing: HashMap::new(),
            semantic: BTreeSet::new(),
            next_sub: 1,
            next_generation: 1,
            errors: VecDeque::new(),
            probe: None,
            error_hook: None,
        }
    }

    pub fn registry(&self) -> &Arc<ThingRegistry> {
        &self.registry
    }

    pub fn ontology(&self) -> &Arc<OntologyGraph> {
        &self.ontology
    }

    pub fn notifications(&self) -> &Arc<NotificationSink> {
        &self.notifications
    }

    /// Called with the rule name and the event's enqueue instant at the
    /// entry of every subscription callback.
    pub fn set_callback_probe(&mut self, probe: impl Fn(&str, Option<Instant>) + Send + Sync + 'static) {
        self.probe = Some(Arc::new(probe));
    }

    pub fn set_error_hook(&mut self, hook: impl Fn(&RuntimeError) + Send + Sync + 'static) {
        self.error_hook = Some(Arc::new(hook));
    }

    /// Makes a rule known without running it, so calls into it report
    /// `RuleNotStarted` rather than `UnknownRule`.
    pub fn declare_rule(&mut self, name: &str) {
        if !self.rules.contains_key(name) {
            self.stopped.insert(name.to_owned());
        }
    }

    /// Drops every trace of a rule, including its settings.
    pub fn forget_rule(&mut self, name: &str) {
        self.stop_rule(name);
        self.stopped.remove(name);
        self.settings.remove(name);
    }

    pub fn set_settings(&mut self, rule: &str, settings: BTreeMap<String, Scalar>) {
        self.settings.insert(rule.to_owned(), settings);
    }

    pub fn set_setting(&mut self, rule: &str, key: &str, value: Scalar) {
        self.settings
            .entry(rule.to_owned())
            .or_default()
            .insert(key.to_owned(), value);
    }

    pub fn setting(&self, rule: &str, key: &str) -> Option<&Scalar> {
        self.settings.get(rule).and_then(|s| s.get(key))
    }

    pub fn is_running(&self, rule: &str) -> bool {
        self.rules.contains_key(rule)
    }

    /// Running rules in installation order.
    pub fn running_rules(&self) -> Vec<String> {
        let mut v: Vec<(u64, &String)> = self.rules.iter().map(|(n, e)| (e.order, n)).collect();
        v.sort();
        v.into_iter().map(|(_, n)| n.clone()).collect()
    }

    /// Creates a fresh environment for `name` and runs its `init` function.
    /// On failure the environment is discarded and the rule stays stopped.
    pub fn start_rule(&mut self, name: &str, script: Arc<RuleScript>, order: u64) -> Result<(), RuntimeError> {
        if self.rules.contains_key(name) {
            return Err(RuntimeError::new("InvalidTransition", name, "rule is already running"));
        }
        if script.rule_name != name {
            return Err(RuntimeError::new(
                "NameMismatch",
                name,
                format!("script defines rule '{}'", script.rule_name),
            ));
        }
        let generation = self.next_generation;
        self.next_generation += 1;
        self.stopped.remove(name);
        self.rules.insert(
            name.to_owned(),
            RuleEnv {
                script,
                globals: HashMap::new(),
                generation,
                order,
            },
        );
        let mut exec = interp::Exec::new(&self.config);
        if let Err(e) = self.invoke(&mut exec, name, "init", Vec::new()) {
            self.stop_rule(name);
            self.record_error(e.clone());
            return Err(e);
        }
        Ok(())
    }

    /// Destroys a rule's environment and cancels its timers and
    /// subscriptions. Returns false if it was not running.
    pub fn stop_rule(&mut self, name: &str) -> bool {
        if self.rules.remove(name).is_none() {
            return false;
        }
        self.stopped.insert(name.to_owned());
        self.timers.retain(|_, t| t.info.owner != name);
        let handles: Vec<u64> = self
            .sub_keys
            .iter()
            .filter(|(_, key)| self.subs.get(key).is_some_and(|s| s.owner == name))
            .map(|(h, _)| *h)
            .collect();
        for h in handles {
            self.cancel_subscription(h);
        }
        true
    }

    /// Value of a rule global, for inspection.
    pub fn global(&self, rule: &str, name: &str) -> Option<Value> {
        self.rules.get(rule).and_then(|e| e.globals.get(name).cloned())
    }

    /// All globals of a rule, sorted by name.
    pub fn globals(&self, rule: &str) -> BTreeMap<String, Value> {
        self.rules
            .get(rule)
            .map(|e| e.globals.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default()
    }

    /// Runs a function of a running rule from the host side.
    pub fn call_function(&mut self, rule: &str, function: &str, args: Vec<Value>) -> Result<Vec<Value>, RuntimeError> {
        let mut exec = interp::Exec::new(&self.config);
        self.invoke(&mut exec, rule, function, args)
    }

    pub fn timers(&self) -> Vec<TimerInfo> {
        self.timers.values().map(|t| t.info.clone()).collect()
    }

    pub fn next_due(&self) -> Option<u64> {
        self.timers.keys().next().map(|(due, _)| *due)
    }

    /// Removes every timer due at or before `now`, reschedules periodic
    /// ones and returns the fires in due order.
    pub fn take_due(&mut self, now: u64) -> Vec<TimerFire> {
        let mut fires = Vec::new();
        while let Some(entry) = self.timers.first_entry() {
            if entry.key().0 > now {
                break;
            }
            let mut spec = entry.remove();
            let due = spec.info.next_due;
            fires.push(TimerFire {
                timer: spec.info.id,
                owner: spec.info.owner.clone(),
                generation: spec.generation,
                function: spec.info.function.clone(),
                due,
            });
            let again = match &mut spec.info.fires_remaining {
                Some(n) => {
                    *n -= 1;
                    *n > 0
                }
                None => true,
            };
            if again {
                spec.info.next_due = due + spec.info.period;
                self.timers.insert((spec.info.next_due, spec.info.id), spec);
            }
        }
        fires
    }

    /// Runs a timer callback unless its rule was stopped since it fell due.
    pub fn fire_timer(&mut self, fire: &TimerFire) {
        let live = self
            .rules
            .get(&fire.owner)
            .is_some_and(|e| e.generation == fire.generation);
        if !live {
            return;
        }
        let mut exec = interp::Exec::new(&self.config);
        if let Err(e) = self.invoke(&mut exec, &fire.owner, &fire.function, Vec::new()) {
            self.record_error(e);
        }
    }

    pub fn subscription_count(&self) -> usize {
        self.subs.len()
    }

    pub fn cancel_subscription(&mut self, handle: u64) -> bool {
        let Some(key) = self.sub_keys.remove(&handle) else {
            return false;
        };
        self.semantic.remove(&key);
        if let Some(sub) = self.subs.remove(&key) {
            if let Trigger::Condition(c) = &sub.trigger {
                for t in c.terms() {
                    if let Some(set) = self.by_thing.get_mut(&t.resource) {
                        set.remove(&key);
                        if set.is_empty() {
                            self.by_thing.remove(&t.resource);
                        }
                    }
                }
            }
        }
        true
    }

    fn add_subscription(&mut self, owner: &str, trigger: Trigger, callback: &str) -> u64 {
        let order = self.rules.get(owner).map(|e| e.order).unwrap_or(u64::MAX);
        let id = self.next_sub;
        self.next_sub += 1;
        let key = (order, id);
        match &trigger {
            Trigger::Condition(c) => {
                for t in c.terms() {
                    self.by_thing.entry(t.resource.clone()).or_default().insert(key);
                }
            }
            Trigger::Query(_) => {
                self.semantic.insert(key);
            }
        }
        self.subs.insert(
            key,
            Arc::new(Subscription {
                owner: owner.to_owned(),
                trigger,
                callback: callback.to_owned(),
            }),
        );
        self.sub_keys.insert(id, key);
        id
    }

    /// Evaluates every subscription the event can affect, in rule
    /// installation order, and runs the callbacks of those that hold.
    pub fn dispatch_event(&mut self, event: &Event, enqueued: Option<Instant>) {
        let mut keys: Vec<(u64, u64)> = self
            .by_thing
            .get(&event.thing_id)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        if !self.semantic.is_empty() {
            keys.extend(self.semantic.iter().copied());
            keys.sort_unstable();
            keys.dedup();
        }
        for key in keys {
            // an earlier callback may have cancelled this one
            let Some(sub) = self.subs.get(&key).cloned() else {
                continue;
            };
            let fire = match &sub.trigger {
                Trigger::Condition(c) => {
                    is_relevant(c, event) && evaluate_condition(c, event, &self.registry)
                }
                Trigger::Query(f) => match_tags(&event.tags, f, &self.ontology),
            };
            if !fire {
                continue;
            }
            if let Some(probe) = &self.probe {
                probe(&sub.owner, enqueued);
            }
            let args = match event.kind {
                EventKind::ValueChanged => vec![
                    Value::str(&event.thing_id),
                    event.capability.as_deref().map(Value::str).unwrap_or(Value::Nil),
                    event.new_value.as_ref().map(Value::from).unwrap_or(Value::Nil),
                ],
                EventKind::Appeared | EventKind::Disappeared => vec![
                    Value::str(&event.thing_id),
                    Value::Bool(event.kind == EventKind::Appeared),
                ],
            };
            let mut exec = interp::Exec::new(&self.config);
            if let Err(e) = self.invoke(&mut exec, &sub.owner, &sub.callback, args) {
                self.record_error(e);
            }
        }
    }

    fn record_error(&mut self, e: RuntimeError) {
        tracing::warn!(rule = %e.rule, line = e.line, code = e.code, "{}", e.message);
        if let Some(hook) = &self.error_hook {
            hook(&e);
        }
        if self.errors.len() == ERROR_HISTORY {
            self.errors.pop_front();
        }
        self.errors.push_back(e);
    }

    /// Most recent callback errors, oldest first.
    pub fn recent_errors(&self) -> Vec<RuntimeError> {
        self.errors.iter().cloned().collect()
    }

    fn now(&self) -> u64 {
        self.clock.now_ms()
    }
}

#[cfg(test)]
mod tests;
