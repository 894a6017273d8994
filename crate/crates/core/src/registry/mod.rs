//! Device registry and the event bus fed by registry mutations.
//!
//! Every mutation that changes observable state (registration, removal, a
//! capability value change) produces exactly one [`Event`]. Sequence numbers
//! are assigned and events handed to the [`EventSink`] while the registry lock
//! is held, so the sink observes a single totally ordered, gap-free stream.

mod commissioning;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::scalar::{Scalar, ScalarType};

pub use commissioning::{parse_commissioning, Commissioning};

pub type Tags = BTreeMap<String, String>;

/// Lowercases a tag key and folds the `loc` alias onto `location`.
pub fn normalize_tag_key(key: &str) -> String {
    let lower = key.trim().to_ascii_lowercase();
    if lower == "loc" {
        "location".to_owned()
    } else {
        lower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    pub name: String,
    pub value: Scalar,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub writable: bool,
    #[serde(default)]
    pub updated_at: u64,
}

impl Capability {
    pub fn new(name: impl Into<String>, value: impl Into<Scalar>, writable: bool) -> Self {
        Self {
            name: name.into(),
            value: value.into(),
            unit: None,
            writable,
            updated_at: 0,
        }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = Some(unit.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thing {
    pub id: String,
    pub tags: Tags,
    pub capabilities: BTreeMap<String, Capability>,
}

impl Thing {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            tags: Tags::new(),
            capabilities: BTreeMap::new(),
        }
    }

    pub fn tag(mut self, key: &str, value: impl Into<String>) -> Self {
        self.tags.insert(normalize_tag_key(key), value.into());
        self
    }

    pub fn capability(mut self, capability: Capability) -> Self {
        self.capabilities.insert(capability.name.clone(), capability);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    ValueChanged,
    Appeared,
    Disappeared,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub thing_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capability: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub old_value: Option<Scalar>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub new_value: Option<Scalar>,
    pub seq: u64,
    pub at: u64,
    /// Tags of the thing at the moment the event was emitted.
    pub tags: Arc<Tags>,
}

/// Receives every registry event, in sequence order.
pub trait EventSink: Send + Sync {
    fn emit(&self, event: Event);
}

/// Sink that records events in memory.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<Event>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn take(&self) -> Vec<Event> {
        std::mem::take(&mut *self.events.lock().unwrap())
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl EventSink for EventLog {
    fn emit(&self, event: Event) {
        self.events.lock().unwrap().push(event);
    }
}

/// Who is writing a capability. Only engine writes honour `writable`; the
/// device side plays the physical world and may update anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteOrigin {
    Device,
    Engine,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("thing '{0}' is already registered")]
    DuplicateId(String),
    #[error("unknown thing '{0}'")]
    UnknownId(String),
    #[error("thing '{thing}' has no capability '{capability}'")]
    UnknownCapability { thing: String, capability: String },
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch {
        expected: ScalarType,
        found: ScalarType,
    },
    #[error("capability '{capability}' of '{thing}' is not writable")]
    NotWritable { thing: String, capability: String },
    #[error("invalid thing: {0}")]
    InvalidThing(String),
    #[error("commissioning parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::DuplicateId(_) => "DuplicateId",
            RegistryError::UnknownId(_) => "UnknownId",
            RegistryError::UnknownCapability { .. } => "UnknownCapability",
            RegistryError::TypeMismatch { .. } => "TypeMismatch",
            RegistryError::NotWritable { .. } => "NotWritable",
            RegistryError::InvalidThing(_) => "InvalidThing",
            RegistryError::Parse { .. } => "ParseError",
        }
    }
}

struct Inner {
    things: BTreeMap<String, Thing>,
    next_seq: u64,
    /// usage tag value -> capability aggregated by semantic queries
    measurements: BTreeMap<String, String>,
}

pub struct ThingRegistry {
    inner: Mutex<Inner>,
    clock: Arc<dyn Clock>,
    sink: Arc<dyn EventSink>,
}

impl std::fmt::Debug for ThingRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ThingRegistry")
            .field("things", &self.len())
            .finish()
    }
}

fn validate_thing(thing: Thing) -> Result<Thing, RegistryError> {
    if thing.id.trim().is_empty() {
        return Err(RegistryError::InvalidThing("id must be non-empty".into()));
    }
    let mut tags = Tags::new();
    for (k, v) in thing.tags {
        let key = normalize_tag_key(&k);
        if key.is_empty() {
            return Err(RegistryError::InvalidThing(format!(
                "thing '{}' has an empty tag key",
                thing.id
            )));
        }
        if tags.insert(key.clone(), v).is_some() {
            return Err(RegistryError::InvalidThing(format!(
                "thing '{}' has more than one value for tag '{key}'",
                thing.id
            )));
        }
    }
    Ok(Thing { tags, ..thing })
}

impl ThingRegistry {
    pub fn new(clock: Arc<dyn Clock>, sink: Arc<dyn EventSink>) -> Self {
        Self {
            inner: Mutex::new(Inner {
                things: BTreeMap::new(),
                next_seq: 1,
                measurements: BTreeMap::new(),
            }),
            clock,
            sink,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn emit(
        &self,
        inner: &mut Inner,
        kind: EventKind,
        thing_id: &str,
        tags: Arc<Tags>,
        change: Option<(String, Scalar, Scalar)>,
        at: u64,
    ) {
        let seq = inner.next_seq;
        inner.next_seq += 1;
        let (capability, old_value, new_value) = match change {
            Some((c, o, n)) => (Some(c), Some(o), Some(n)),
            None => (None, None, None),
        };
        self.sink.emit(Event {
            kind,
            thing_id: thing_id.to_owned(),
            capability,
            old_value,
            new_value,
            seq,
            at,
            tags,
        });
    }

    pub fn register_thing(&self, thing: Thing) -> Result<(), RegistryError> {
        let mut thing = validate_thing(thing)?;
        let now = self.clock.now_ms();
        let mut inner = self.lock();
        if inner.things.contains_key(&thing.id) {
            return Err(RegistryError::DuplicateId(thing.id));
        }
        for cap in thing.capabilities.values_mut() {
            cap.updated_at = now;
        }
        let id = thing.id.clone();
        let tags = Arc::new(thing.tags.clone());
        inner.things.insert(id.clone(), thing);
        self.emit(&mut inner, EventKind::Appeared, &id, tags, None, now);
        Ok(())
    }

    pub fn deregister_thing(&self, id: &str) -> Result<(), RegistryError> {
        let now = self.clock.now_ms();
        let mut inner = self.lock();
        let thing = inner
            .things
            .remove(id)
            .ok_or_else(|| RegistryError::UnknownId(id.to_owned()))?;
        self.emit(
            &mut inner,
            EventKind::Disappeared,
            id,
            Arc::new(thing.tags),
            None,
            now,
        );
        Ok(())
    }

    /// Writes a capability value. Emits one `ValueChanged` event when the new
    /// value differs from the stored one; equal writes are silent.
    pub fn set_capability_value(
        &self,
        thing_id: &str,
        capability: &str,
        value: Scalar,
        origin: WriteOrigin,
    ) -> Result<(), RegistryError> {
        let now = self.clock.now_ms();
        let mut inner = self.lock();
        let thing = inner
            .things
            .get_mut(thing_id)
            .ok_or_else(|| RegistryError::UnknownId(thing_id.to_owned()))?;
        let cap = thing
            .capabilities
            .get_mut(capability)
            .ok_or_else(|| RegistryError::UnknownCapability {
                thing: thing_id.to_owned(),
                capability: capability.to_owned(),
            })?;
        if cap.value.scalar_type() != value.scalar_type() {
            return Err(RegistryError::TypeMismatch {
                expected: cap.value.scalar_type(),
                found: value.scalar_type(),
            });
        }
        if origin == WriteOrigin::Engine && !cap.writable {
            return Err(RegistryError::NotWritable {
                thing: thing_id.to_owned(),
                capability: capability.to_owned(),
            });
        }
        cap.updated_at = now;
        if cap.value == value {
            return Ok(());
        }
        let old = std::mem::replace(&mut cap.value, value.clone());
        let tags = Arc::new(thing.tags.clone());
        self.emit(
            &mut inner,
            EventKind::ValueChanged,
            thing_id,
            tags,
            Some((capability.to_owned(), old, value)),
            now,
        );
        Ok(())
    }

    /// Returns an owned snapshot of a capability.
    pub fn get_capability(&self, thing_id: &str, capability: &str) -> Result<Capability, RegistryError> {
        let inner = self.lock();
        let thing = inner
            .things
            .get(thing_id)
            .ok_or_else(|| RegistryError::UnknownId(thing_id.to_owned()))?;
        thing
            .capabilities
            .get(capability)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownCapability {
                thing: thing_id.to_owned(),
                capability: capability.to_owned(),
            })
    }

    /// Current value of a capability, or `None` when the thing or capability is absent.
    pub fn value_of(&self, thing_id: &str, capability: &str) -> Option<Scalar> {
        let inner = self.lock();
        inner
            .things
            .get(thing_id)
            .and_then(|t| t.capabilities.get(capability))
            .map(|c| c.value.clone())
    }

    pub fn get_thing(&self, id: &str) -> Option<Thing> {
        self.lock().things.get(id).cloned()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lock().things.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.lock().things.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All things, ordered by id.
    pub fn snapshot(&self) -> Vec<Thing> {
        self.lock().things.values().cloned().collect()
    }

    /// Runs `f` over the current thing map without cloning it.
    pub fn read<R>(&self, f: impl FnOnce(&BTreeMap<String, Thing>) -> R) -> R {
        f(&self.lock().things)
    }

    /// Capability aggregated by semantic queries for things with the given `usage` tag.
    pub fn measurement_for_usage(&self, usage: &str) -> Option<String> {
        self.lock().measurements.get(usage).cloned()
    }

    pub fn set_measurement(&self, usage: impl Into<String>, capability: impl Into<String>) {
        self.lock().measurements.insert(usage.into(), capability.into());
    }

    /// Registers every thing of a commissioning document, or none of them.
    pub fn load_commissioning(&self, document: &str) -> Result<usize, RegistryError> {
        let commissioning = parse_commissioning(document)?;
        self.apply_commissioning(commissioning)
    }

    pub fn apply_commissioning(&self, commissioning: Commissioning) -> Result<usize, RegistryError> {
        let now = self.clock.now_ms();
        let mut things = Vec::with_capacity(commissioning.things.len());
        for thing in commissioning.things {
            things.push(validate_thing(thing)?);
        }
        let mut inner = self.lock();
        let mut seen = std::collections::BTreeSet::new();
        for thing in &things {
            if inner.things.contains_key(&thing.id) || !seen.insert(thing.id.as_str()) {
                return Err(RegistryError::DuplicateId(thing.id.clone()));
            }
        }
        let count = things.len();
        for mut thing in things {
            for cap in thing.capabilities.values_mut() {
                cap.updated_at = now;
            }
            let id = thing.id.clone();
            let tags = Arc::new(thing.tags.clone());
            inner.things.insert(id.clone(), thing);
            self.emit(&mut inner, EventKind::Appeared, &id, tags, None, now);
        }
        inner.measurements.extend(commissioning.measurements);
        Ok(count)
    }
}
