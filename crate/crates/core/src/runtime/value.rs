use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::registry::Capability;
use crate::scalar::Scalar;

/// Snapshot of a capability handed to rule code by `engine.getCapability`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapabilityRef {
    pub thing: String,
    pub name: String,
    pub value: Scalar,
    pub unit: Option<String>,
    pub writable: bool,
}

impl CapabilityRef {
    pub fn new(thing: &str, cap: &Capability) -> Self {
        Self {
            thing: thing.to_owned(),
            name: cap.name.clone(),
            value: cap.value.clone(),
            unit: cap.unit.clone(),
            writable: cap.writable,
        }
    }
}

/// A RuleScript runtime value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Nil,
    Bool(bool),
    Number(f64),
    Str(Arc<str>),
    List(Arc<Vec<Value>>),
    Capability(Arc<CapabilityRef>),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Nil => "nil",
            Value::Bool(_) => "boolean",
            Value::Number(_) => "number",
            Value::Str(_) => "string",
            Value::List(_) => "list",
            Value::Capability(_) => "capability",
        }
    }

    /// `nil` and `false` are false; everything else is true.
    pub fn truthy(&self) -> bool {
        !matches!(self, Value::Nil | Value::Bool(false))
    }

    pub fn str(s: &str) -> Self {
        Value::Str(Arc::from(s))
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    /// Converts to a registry scalar; lists, capabilities and nil have none.
    pub fn to_scalar(&self) -> Option<Scalar> {
        match self {
            Value::Bool(b) => Some(Scalar::Bool(*b)),
            Value::Number(n) => Some(Scalar::Number(*n)),
            Value::Str(s) => Some(Scalar::Text(s.to_string())),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Nil => serde_json::Value::Null,
            Value::Bool(b) => (*b).into(),
            Value::Number(n) => serde_json::Number::from_f64(*n)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Value::Str(s) => s.to_string().into(),
            Value::List(xs) => xs.iter().map(Value::to_json).collect(),
            Value::Capability(c) => serde_json::to_value(&**c).unwrap_or_default(),
        }
    }
}

impl From<Scalar> for Value {
    fn from(s: Scalar) -> Self {
        match s {
            Scalar::Bool(b) => Value::Bool(b),
            Scalar::Number(n) => Value::Number(n),
            Scalar::Text(t) => Value::Str(t.into()),
        }
    }
}

impl From<&Scalar> for Value {
    fn from(s: &Scalar) -> Self {
        s.clone().into()
    }
}

impl From<f64> for Value {
    fn from(n: f64) -> Self {
        Value::Number(n)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::str(s)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Nil => f.write_str("nil"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Str(s) => f.write_str(s),
            Value::List(xs) => {
                f.write_str("[")?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str("]")
            }
            Value::Capability(c) => write!(f, "[{}]{}={}", c.thing, c.name, c.value),
        }
    }
}
