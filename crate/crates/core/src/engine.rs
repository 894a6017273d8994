//! The gateway engine: one work queue, one scheduler, and the registry,
//! runtime and lifecycle manager it serializes.
//!
//! Producers (device simulators, the HTTP API, timers) may enqueue from any
//! thread. Every item runs on a single logical scheduler: either a dedicated
//! thread ([`Engine::spawn_scheduler`]) or the caller, for virtual-clock runs
//! driven through [`Engine::run_until_idle`] and [`Engine::advance_to`].

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use ed25519_dalek::VerifyingKey;
use serde::Serialize;
use thiserror::Error;

use crate::clock::{Clock, VirtualClock};
use crate::lifecycle::{LifecycleError, LifecycleManager, RuleRecord, RuleState, StateStore};
use crate::registry::{Event, EventSink, RegistryError, Thing, ThingRegistry, WriteOrigin};
use crate::runtime::{Notification, NotificationSink, Runtime, RuntimeConfig, RuntimeError, TimerFire, WorkQueue};
use crate::scalar::Scalar;
use crate::semantic::{eval_query, parse_query, OntologyGraph, QueryError, QueryResult};

#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub queue_capacity: usize,
    pub notification_capacity: usize,
    pub notification_file: Option<PathBuf>,
    pub runtime: RuntimeConfig,
    pub state_dir: PathBuf,
    pub trusted_keys: Vec<VerifyingKey>,
    /// Stack size of the scheduler thread.
    pub stack_size: usize,
}

impl EngineOptions {
    pub fn new(state_dir: impl Into<PathBuf>, trusted_keys: Vec<VerifyingKey>) -> Self {
        Self {
            queue_capacity: 10_000,
            notification_capacity: 1000,
            notification_file: None,
            runtime: RuntimeConfig::default(),
            state_dir: state_dir.into(),
            trusted_keys,
            stack_size: 64 << 20,
        }
    }
}

/// Something the outside world may want to watch.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EngineEvent {
    Notification(Notification),
    Lifecycle(LifecycleChange),
    Device(Event),
    RuleError(RuleErrorInfo),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifecycleChange {
    pub rule: String,
    pub action: &'static str,
    /// `None` once the rule is uninstalled.
    pub state: Option<RuleState>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleErrorInfo {
    pub rule: String,
    pub code: &'static str,
    pub line: u32,
    pub message: String,
}

impl From<&RuntimeError> for RuleErrorInfo {
    fn from(e: &RuntimeError) -> Self {
        Self {
            rule: e.rule.clone(),
            code: e.code,
            line: e.line,
            message: e.message.clone(),
        }
    }
}

type Observer = Arc<dyn Fn(&EngineEvent) + Send + Sync>;

#[derive(Default)]
struct Observers {
    list: RwLock<Vec<Observer>>,
    any: AtomicBool,
}

impl Observers {
    fn add(&self, o: Observer) {
        self.list.write().unwrap_or_else(|e| e.into_inner()).push(o);
        self.any.store(true, Ordering::Release);
    }

    fn active(&self) -> bool {
        self.any.load(Ordering::Acquire)
    }

    fn emit(&self, event: EngineEvent) {
        if !self.active() {
            return;
        }
        for o in self.list.read().unwrap_or_else(|e| e.into_inner()).iter() {
            o(&event);
        }
    }
}

/// State owned by the scheduler. Reached from other threads only through
/// [`Engine::submit`].
pub struct Core {
    pub runtime: Runtime,
    pub lifecycle: LifecycleManager,
    observers: Arc<Observers>,
    snapshot: Arc<RwLock<Vec<RuleRecord>>>,
}

impl Core {
    fn changed(&self, rule: &str, action: &'static str) {
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = self.lifecycle.records();
        let rec = self.lifecycle.record(rule);
        self.observers.emit(EngineEvent::Lifecycle(LifecycleChange {
            rule: rule.to_owned(),
            action,
            state: rec.map(|r| r.state),
            version: rec.map(|r| r.version.clone()),
        }));
    }

    pub fn install(&mut self, pkg: crate::lifecycle::RulePackage) -> Result<(RuleRecord, bool), LifecycleError> {
        let name = pkg.manifest.name.clone();
        let res = self.lifecycle.install(&mut self.runtime, pkg);
        match res {
            Ok(out) => {
                self.changed(&name, if out.updated { "update" } else { "install" });
                Ok((out.record, out.updated))
            }
            Err(e) => {
                if self.lifecycle.record(&name).is_some() {
                    self.changed(&name, "update");
                }
                Err(e)
            }
        }
    }

    pub fn start(&mut self, name: &str) -> Result<RuleRecord, LifecycleError> {
        let res = self.lifecycle.start(&mut self.runtime, name);
        if !matches!(res, Err(LifecycleError::UnknownRule(_)) | Err(LifecycleError::InvalidTransition { .. })) {
            self.changed(name, "start");
        }
        res
    }

    pub fn stop(&mut self, name: &str) -> Result<RuleRecord, LifecycleError> {
        let res = self.lifecycle.stop(&mut self.runtime, name);
        if res.is_ok() {
            self.changed(name, "stop");
        }
        res
    }

    pub fn uninstall(&mut self, name: &str) -> Result<(), LifecycleError> {
        let res = self.lifecycle.uninstall(&mut self.runtime, name);
        if res.is_ok() {
            self.changed(name, "uninstall");
        }
        res
    }

    pub fn set_param(&mut self, name: &str, key: &str, value: Scalar) -> Result<RuleRecord, LifecycleError> {
        let res = self.lifecycle.set_param(&mut self.runtime, name, key, value);
        if res.is_ok() {
            self.changed(name, "set_param");
        }
        res
    }

    pub fn restore(&mut self) -> Result<usize, LifecycleError> {
        let n = self.lifecycle.restore(&mut self.runtime)?;
        for rec in self.lifecycle.records() {
            self.changed(&rec.name, "restore");
        }
        Ok(n)
    }
}

type Command = Box<dyn FnOnce(&mut Core) + Send>;

enum WorkItem {
    Event { event: Event, enqueued: Instant },
    Timer(TimerFire),
    Command(Command),
}

struct QueueSink(Arc<WorkQueue<WorkItem>>);

impl EventSink for QueueSink {
    fn emit(&self, event: Event) {
        self.0.push(WorkItem::Event {
            event,
            enqueued: Instant::now(),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("engine is shut down")]
pub struct EngineClosed;

struct Shared {
    registry: Arc<ThingRegistry>,
    ontology: Arc<OntologyGraph>,
    clock: Arc<dyn Clock>,
    virtual_clock: Option<Arc<VirtualClock>>,
    queue: Arc<WorkQueue<WorkItem>>,
    core: Mutex<Core>,
    observers: Arc<Observers>,
    snapshot: Arc<RwLock<Vec<RuleRecord>>>,
    notifications: Arc<NotificationSink>,
    trusted: Vec<VerifyingKey>,
    driver: Mutex<()>,
    threaded: AtomicBool,
    shutdown: AtomicBool,
    processed: AtomicU64,
}

impl Shared {
    fn core(&self) -> MutexGuard<'_, Core> {
        self.core.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn process(&self, item: WorkItem) {
        let mut core = self.core();
        match item {
            WorkItem::Event { event, enqueued } => {
                core.runtime.dispatch_event(&event, Some(enqueued));
                drop(core);
                self.observers.emit(EngineEvent::Device(event));
            }
            WorkItem::Timer(fire) => core.runtime.fire_timer(&fire),
            WorkItem::Command(cmd) => cmd(&mut core),
        }
        self.processed.fetch_add(1, Ordering::Relaxed);
    }

    fn enqueue_due(&self, now: u64) {
        let fires = self.core().runtime.take_due(now);
        for f in fires {
            self.queue.push(WorkItem::Timer(f));
        }
    }

    fn drain(&self) -> usize {
        let mut n = 0;
        while let Some(item) = self.queue.try_pop() {
            self.process(item);
            n += 1;
        }
        n
    }

    fn scheduler_loop(&self) {
        const MAX_SLEEP: u64 = 20;
        while !self.shutdown.load(Ordering::Acquire) {
            let now = self.clock.now_ms();
            self.enqueue_due(now);
            let wait = self
                .core()
                .runtime
                .next_due()
                .map(|d| d.saturating_sub(now).clamp(1, MAX_SLEEP))
                .unwrap_or(MAX_SLEEP);
            if let Some(item) = self.queue.pop_timeout(Duration::from_millis(wait)) {
                self.process(item);
            }
        }
        // finish queued commands so no caller waits forever
        while let Some(item) = self.queue.try_pop() {
            if let WorkItem::Command(cmd) = item {
                cmd(&mut self.core());
            }
        }
    }
}

/// Handle to a running engine. Cheap to share behind an `Arc`.
pub struct Engine {
    shared: Arc<Shared>,
    thread: Mutex<Option<JoinHandle<()>>>,
    stack_size: usize,
}

impl Engine {
    /// Engine on a virtual clock starting at `start_ms`, driven by the caller.
    pub fn with_virtual_clock(start_ms: u64, ontology: OntologyGraph, options: EngineOptions) -> std::io::Result<Self> {
        let clock = Arc::new(VirtualClock::new(start_ms));
        Self::build(clock.clone(), Some(clock), ontology, options)
    }

    pub fn with_clock(clock: Arc<dyn Clock>, ontology: OntologyGraph, options: EngineOptions) -> std::io::Result<Self> {
        Self::build(clock, None, ontology, options)
    }

    fn build(
        clock: Arc<dyn Clock>,
        virtual_clock: Option<Arc<VirtualClock>>,
        ontology: OntologyGraph,
        options: EngineOptions,
    ) -> std::io::Result<Self> {
        let queue = Arc::new(WorkQueue::new(options.queue_capacity));
        let registry = Arc::new(ThingRegistry::new(clock.clone(), Arc::new(QueueSink(queue.clone()))));
        let ontology = Arc::new(ontology);
        let notifications = Arc::new(match &options.notification_file {
            Some(path) => NotificationSink::with_file(options.notification_capacity, path)?,
            None => NotificationSink::new(options.notification_capacity),
        });
        let observers = Arc::new(Observers::default());
        {
            let obs = observers.clone();
            notifications.set_hook(move |n| obs.emit(EngineEvent::Notification(n.clone())));
        }
        let mut runtime = Runtime::new(
            registry.clone(),
            ontology.clone(),
            clock.clone(),
            notifications.clone(),
            options.runtime,
        );
        {
            let obs = observers.clone();
            runtime.set_error_hook(move |e| obs.emit(EngineEvent::RuleError(e.into())));
        }
        let store = StateStore::open(&options.state_dir)?;
        let lifecycle = LifecycleManager::new(store, options.trusted_keys.clone());
        let snapshot = Arc::new(RwLock::new(Vec::new()));
        let core = Core {
            runtime,
            lifecycle,
            observers: observers.clone(),
            snapshot: snapshot.clone(),
        };
        Ok(Self {
            shared: Arc::new(Shared {
                registry,
                ontology,
                clock,
                virtual_clock,
                queue,
                core: Mutex::new(core),
                observers,
                snapshot,
                notifications,
                trusted: options.trusted_keys.clone(),
                driver: Mutex::new(()),
                threaded: AtomicBool::new(false),
                shutdown: AtomicBool::new(false),
                processed: AtomicU64::new(0),
            }),
            thread: Mutex::new(None),
            stack_size: options.stack_size,
        })
    }

    /// Runs the scheduler on its own thread from now on.
    pub fn spawn_scheduler(&self) -> std::io::Result<()> {
        let mut slot = self.thread.lock().unwrap_or_else(|e| e.into_inner());
        if slot.is_some() {
            return Ok(());
        }
        let shared = self.shared.clone();
        let handle = std::thread::Builder::new()
            .name("sre-scheduler".into())
            .stack_size(self.stack_size)
            .spawn(move || {
                let _driver = shared.driver.lock().unwrap_or_else(|e| e.into_inner());
                shared.scheduler_loop();
            })?;
        self.shared.threaded.store(true, Ordering::Release);
        *slot = Some(handle);
        Ok(())
    }

    /// Stops the scheduler thread after the item it is running.
    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::Release);
        self.shared.queue.wake();
        if let Some(h) = self.thread.lock().unwrap_or_else(|e| e.into_inner()).take() {
            let _ = h.join();
        }
    }

    fn threaded(&self) -> bool {
        self.shared.threaded.load(Ordering::Acquire)
    }

    pub fn registry(&self) -> &Arc<ThingRegistry> {
        &self.shared.registry
    }

    pub fn ontology(&self) -> &Arc<OntologyGraph> {
        &self.shared.ontology
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.shared.clock
    }

    pub fn now_ms(&self) -> u64 {
        self.shared.clock.now_ms()
    }

    pub fn notifications(&self) -> &Arc<NotificationSink> {
        &self.shared.notifications
    }

    pub fn queue_len(&self) -> usize {
        self.shared.queue.len()
    }

    /// Number of work items processed so far.
    pub fn processed(&self) -> u64 {
        self.shared.processed.load(Ordering::Relaxed)
    }

    /// Registers a callback for notifications, lifecycle changes, rule
    /// errors and dispatched device events. Called on the scheduler thread.
    pub fn observe(&self, f: impl Fn(&EngineEvent) + Send + Sync + 'static) {
        self.shared.observers.add(Arc::new(f));
    }

    /// Runs `f` as a queue item on the scheduler and returns its result.
    pub fn submit<T: Send + 'static>(&self, f: impl FnOnce(&mut Core) -> T + Send + 'static) -> Result<T, EngineClosed> {
        if self.shared.shutdown.load(Ordering::Acquire) {
            return Err(EngineClosed);
        }
        let (tx, rx) = mpsc::sync_channel(1);
        self.make_room();
        self.shared.queue.push(WorkItem::Command(Box::new(move |core| {
            let _ = tx.send(f(core));
        })));
        if !self.threaded() {
            self.run_until_idle();
        }
        rx.recv().map_err(|_| EngineClosed)
    }

    fn make_room(&self) {
        let q = &self.shared.queue;
        if self.threaded() {
            while !q.wait_for_capacity(Duration::from_millis(100)) {
                if self.shared.shutdown.load(Ordering::Acquire) {
                    return;
                }
            }
        } else if q.len() >= q.capacity() {
            self.run_until_idle();
        }
    }

    /// Processes queued items on the calling thread until the queue is
    /// empty. Does nothing useful once a scheduler thread owns the queue.
    pub fn run_until_idle(&self) -> usize {
        if self.threaded() {
            return 0;
        }
        let _driver = self.shared.driver.lock().unwrap_or_else(|e| e.into_inner());
        self.shared.drain()
    }

    /// Moves the virtual clock to `t`, firing every timer due on the way at
    /// its due time, and processes everything that results.
    ///
    /// # Panics
    /// If the engine was not built with a virtual clock.
    pub fn advance_to(&self, t: u64) {
        let clock = self.shared.virtual_clock.clone().expect("advance_to needs a virtual clock");
        let _driver = self.shared.driver.lock().unwrap_or_else(|e| e.into_inner());
        self.shared.drain();
        loop {
            let due = self.shared.core().runtime.next_due().filter(|d| *d <= t);
            let Some(due) = due else { break };
            clock.set(due.max(clock.now_ms()));
            self.shared.enqueue_due(due);
            self.shared.drain();
        }
        if clock.now_ms() < t {
            clock.set(t);
        }
        self.shared.drain();
    }

    pub fn advance_by(&self, delta_ms: u64) {
        self.advance_to(self.now_ms() + delta_ms);
    }

    /// Device-side capability write. Waits for queue space first so a fast
    /// producer cannot overrun the scheduler.
    pub fn device_write(&self, thing: &str, capability: &str, value: impl Into<Scalar>) -> Result<(), RegistryError> {
        self.make_room();
        self.shared
            .registry
            .set_capability_value(thing, capability, value.into(), WriteOrigin::Device)
    }

    pub fn register_thing(&self, thing: Thing) -> Result<(), RegistryError> {
        self.make_room();
        self.shared.registry.register_thing(thing)
    }

    pub fn deregister_thing(&self, id: &str) -> Result<(), RegistryError> {
        self.make_room();
        self.shared.registry.deregister_thing(id)
    }

    /// Evaluates a Search/Count/aggregate query against the current registry.
    pub fn query(&self, text: &str) -> Result<QueryResult, QueryError> {
        let q = parse_query(text)?;
        eval_query(&q, &self.shared.registry, &self.shared.ontology)
    }

    /// Rule records as of the last lifecycle change, in install order.
    pub fn rules(&self) -> Vec<RuleRecord> {
        self.shared.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn rule(&self, name: &str) -> Option<RuleRecord> {
        self.rules().into_iter().find(|r| r.name == name)
    }

    /// Validates a package on the calling thread, then installs it through
    /// the scheduler. Returns the record and whether it replaced a rule.
    pub fn install(&self, bytes: &[u8]) -> Result<(RuleRecord, bool), LifecycleError> {
        let pkg = crate::lifecycle::validate_package(bytes, &self.shared.trusted)?;
        self.submit(move |core| core.install(pkg)).map_err(closed)?
    }

    pub fn start(&self, name: &str) -> Result<RuleRecord, LifecycleError> {
        let name = name.to_owned();
        self.submit(move |core| core.start(&name)).map_err(closed)?
    }

    pub fn stop(&self, name: &str) -> Result<RuleRecord, LifecycleError> {
        let name = name.to_owned();
        self.submit(move |core| core.stop(&name)).map_err(closed)?
    }

    pub fn uninstall(&self, name: &str) -> Result<(), LifecycleError> {
        let name = name.to_owned();
        self.submit(move |core| core.uninstall(&name)).map_err(closed)?
    }

    pub fn set_param(&self, name: &str, key: &str, value: Scalar) -> Result<RuleRecord, LifecycleError> {
        let (name, key) = (name.to_owned(), key.to_owned());
        self.submit(move |core| core.set_param(&name, &key, value)).map_err(closed)?
    }

    /// Reloads persisted rules. Meant to run once at boot.
    pub fn restore(&self) -> Result<usize, LifecycleError> {
        self.submit(|core| core.restore()).map_err(closed)?
    }
}

fn closed(_: EngineClosed) -> LifecycleError {
    LifecycleError::Storage("engine is shut down".into())
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.shutdown();
    }
}
