//! Commissioning documents: the JSON list of things annotated at setup time.
//!
//! Two shapes are accepted. The bare form is an array of things:
//!
//! ```json
//! [{ "id": "LumA", "tags": {"location": "Room1", "usage": "LuminositySensor"},
//!    "capabilities": [{"name": "Luminosity", "type": "number", "value": 300, "unit": "lux", "writable": false}] }]
//! ```
//!
//! The object form adds the usage-to-measurement map read by aggregate queries:
//! `{ "measurements": {"LuminositySensor": "Luminosity"}, "things": [...] }`.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{normalize_tag_key, Capability, RegistryError, Thing};
use crate::scalar::{Scalar, ScalarType};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Commissioning {
    pub things: Vec<Thing>,
    pub measurements: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FullDocument {
    #[serde(default)]
    measurements: BTreeMap<String, String>,
    things: Vec<ThingEntry>,
}

#[derive(Deserialize)]
#[serde(try_from = "RawThing")]
struct ThingEntry(Thing);

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThing {
    id: String,
    #[serde(default)]
    tags: BTreeMap<String, String>,
    #[serde(default)]
    capabilities: Vec<CapabilityEntry>,
}

#[derive(Deserialize)]
#[serde(try_from = "RawCapability")]
struct CapabilityEntry(Capability);

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCapability {
    name: String,
    #[serde(rename = "type")]
    kind: ScalarType,
    value: serde_json::Value,
    #[serde(default)]
    unit: Option<String>,
    #[serde(default)]
    writable: bool,
}

impl TryFrom<RawCapability> for CapabilityEntry {
    type Error = String;

    fn try_from(raw: RawCapability) -> Result<Self, Self::Error> {
        if raw.name.is_empty() {
            return Err("capability name must be non-empty".into());
        }
        let value = Scalar::from_json(&raw.value)
            .filter(|v| v.scalar_type() == raw.kind)
            .ok_or_else(|| {
                format!(
                    "capability '{}' declared as {} but value is {}",
                    raw.name, raw.kind, raw.value
                )
            })?;
        Ok(CapabilityEntry(Capability {
            name: raw.name,
            value,
            unit: raw.unit,
            writable: raw.writable,
            updated_at: 0,
        }))
    }
}

impl TryFrom<RawThing> for ThingEntry {
    type Error = String;

    fn try_from(raw: RawThing) -> Result<Self, Self::Error> {
        if raw.id.trim().is_empty() {
            return Err("thing id must be non-empty".into());
        }
        let mut tags = BTreeMap::new();
        for (k, v) in raw.tags {
            let key = normalize_tag_key(&k);
            if tags.insert(key.clone(), v).is_some() {
                return Err(format!("thing '{}' has more than one value for tag '{key}'", raw.id));
            }
        }
        let mut capabilities = BTreeMap::new();
        for CapabilityEntry(cap) in raw.capabilities {
            if capabilities.contains_key(&cap.name) {
                return Err(format!("thing '{}' declares capability '{}' twice", raw.id, cap.name));
            }
            capabilities.insert(cap.name.clone(), cap);
        }
        Ok(ThingEntry(Thing {
            id: raw.id,
            tags,
            capabilities,
        }))
    }
}

/// Parses a commissioning document without touching any registry.
pub fn parse_commissioning(document: &str) -> Result<Commissioning, RegistryError> {
    let parse_error = |e: serde_json::Error| RegistryError::Parse {
        line: e.line(),
        message: e.to_string(),
    };
    // Dispatch on the first character so serde keeps line information.
    let (things, measurements) = if document.trim_start().starts_with('{') {
        let doc: FullDocument = serde_json::from_str(document).map_err(parse_error)?;
        (doc.things, doc.measurements)
    } else {
        let things: Vec<ThingEntry> = serde_json::from_str(document).map_err(parse_error)?;
        (things, BTreeMap::new())
    };
    Ok(Commissioning {
        things: things.into_iter().map(|ThingEntry(t)| t).collect(),
        measurements,
    })
}
