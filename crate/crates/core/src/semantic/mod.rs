//! Semantic query engine: tag filters over the registry, widened through an
//! ontology for `@`-prefixed terms, plus aggregate and subscription verbs.

mod ontology;
mod query;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::registry::{Event, Tags, Thing, ThingRegistry};
use crate::scalar::Scalar;

pub use ontology::{load_ontology, Edge, OntologyError, OntologyGraph, Relation};
pub use query::{parse_query, FilterExpr, FilterTerm, Query, Target, Verb};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("syntax error at position {position}: expected {expected}")]
    Syntax { position: usize, expected: String },
    #[error("unknown verb '{verb}' at position {position}")]
    UnknownVerb { verb: String, position: usize },
    #[error("unknown target '{target}' at position {position}")]
    UnknownTarget { target: String, position: usize },
    #[error("{verb:?} requires target Variable")]
    TargetMismatch { verb: Verb },
    #[error("aggregate over zero matching things")]
    EmptyAggregate,
    #[error("thing '{thing}' has no numeric measurement to aggregate")]
    NonNumericCapability { thing: String },
    #[error("expected a {expected:?} query, got {found:?}")]
    VerbMismatch { expected: Verb, found: Verb },
}

impl QueryError {
    pub fn code(&self) -> &'static str {
        match self {
            QueryError::Syntax { .. } => "SyntaxError",
            QueryError::UnknownVerb { .. } => "UnknownVerb",
            QueryError::UnknownTarget { .. } => "UnknownTarget",
            QueryError::TargetMismatch { .. } => "TargetMismatch",
            QueryError::EmptyAggregate => "EmptyAggregate",
            QueryError::NonNumericCapability { .. } => "NonNumericCapability",
            QueryError::VerbMismatch { .. } => "VerbMismatch",
        }
    }

    /// Character offset of a parse error, when there is one.
    pub fn position(&self) -> Option<usize> {
        match self {
            QueryError::Syntax { position, .. }
            | QueryError::UnknownVerb { position, .. }
            | QueryError::UnknownTarget { position, .. } => Some(*position),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryResult {
    /// Matching thing ids, sorted.
    Things(Vec<String>),
    Number(f64),
    Count(usize),
}

fn term_matches(tags: &Tags, term: &FilterTerm, ontology: &OntologyGraph) -> bool {
    let Some(actual) = tags.get(&term.key) else {
        return false;
    };
    if *actual == term.value {
        return true;
    }
    if !term.inferred {
        return false;
    }
    match ontology.relation_for_key(&term.key) {
        Some(rel) => ontology.is_ancestor(actual, &term.value, rel),
        None => false,
    }
}

/// Evaluates a filter against a tag set.
pub fn match_tags(tags: &Tags, filter: &FilterExpr, ontology: &OntologyGraph) -> bool {
    match filter {
        FilterExpr::Term(t) => term_matches(tags, t, ontology),
        FilterExpr::And(a, b) => match_tags(tags, a, ontology) && match_tags(tags, b, ontology),
        FilterExpr::Or(a, b) => match_tags(tags, a, ontology) || match_tags(tags, b, ontology),
    }
}

pub fn match_thing(thing: &Thing, filter: &FilterExpr, ontology: &OntologyGraph) -> bool {
    match_tags(&thing.tags, filter, ontology)
}

/// Picks the capability an aggregate reads from `thing`: the one configured
/// for its `usage` tag, else its only numeric capability.
fn measurement(thing: &Thing, registry: &ThingRegistry) -> Result<f64, QueryError> {
    let non_numeric = || QueryError::NonNumericCapability {
        thing: thing.id.clone(),
    };
    let configured = thing
        .tags
        .get("usage")
        .and_then(|u| registry.measurement_for_usage(u));
    let cap = match configured {
        Some(name) => thing.capabilities.get(&name).ok_or_else(non_numeric)?,
        None => {
            let mut numeric = thing
                .capabilities
                .values()
                .filter(|c| matches!(c.value, Scalar::Number(_)));
            match (numeric.next(), numeric.next()) {
                (Some(c), None) => c,
                _ => return Err(non_numeric()),
            }
        }
    };
    cap.value.as_f64().ok_or_else(non_numeric)
}

/// Evaluates a parsed query against the registry. Subscribe queries are
/// rejected; use [`SubscriptionTable`].
pub fn eval_query(
    query: &Query,
    registry: &ThingRegistry,
    ontology: &OntologyGraph,
) -> Result<QueryResult, QueryError> {
    if query.verb == Verb::Subscribe {
        return Err(QueryError::VerbMismatch {
            expected: Verb::Search,
            found: Verb::Subscribe,
        });
    }
    let matched: Vec<Thing> = registry.read(|things| {
        things
            .values()
            .filter(|t| match_thing(t, &query.filter, ontology))
            .cloned()
            .collect()
    });
    match query.verb {
        Verb::Search => Ok(QueryResult::Things(matched.into_iter().map(|t| t.id).collect())),
        Verb::Count => Ok(QueryResult::Count(matched.len())),
        verb => {
            if matched.is_empty() {
                return Err(QueryError::EmptyAggregate);
            }
            let values = matched
                .iter()
                .map(|t| measurement(t, registry))
                .collect::<Result<Vec<f64>, _>>()?;
            let sum: f64 = values.iter().sum();
            Ok(QueryResult::Number(match verb {
                Verb::Sum => sum,
                Verb::Avg => sum / values.len() as f64,
                Verb::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
                Verb::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                _ => unreachable!("non-aggregate verbs handled above"),
            }))
        }
    }
}

/// Opaque handle returned by [`SubscriptionTable::subscribe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SubscriptionHandle(pub u64);

/// Tag-filter subscriptions. Callbacks are opaque values chosen by the caller;
/// the table only decides which ones an event reaches.
#[derive(Debug, Clone)]
pub struct SubscriptionTable<C> {
    next: u64,
    entries: BTreeMap<u64, (FilterExpr, C)>,
}

impl<C> Default for SubscriptionTable<C> {
    fn default() -> Self {
        Self {
            next: 1,
            entries: BTreeMap::new(),
        }
    }
}

impl<C> SubscriptionTable<C> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&mut self, query: &Query, callback: C) -> Result<SubscriptionHandle, QueryError> {
        if query.verb != Verb::Subscribe {
            return Err(QueryError::VerbMismatch {
                expected: Verb::Subscribe,
                found: query.verb,
            });
        }
        let id = self.next;
        self.next += 1;
        self.entries.insert(id, (query.filter.clone(), callback));
        Ok(SubscriptionHandle(id))
    }

    pub fn cancel(&mut self, handle: SubscriptionHandle) -> bool {
        self.entries.remove(&handle.0).is_some()
    }

    /// Removes every subscription whose callback satisfies `pred`.
    pub fn cancel_where(&mut self, mut pred: impl FnMut(&C) -> bool) {
        self.entries.retain(|_, (_, c)| !pred(c));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Subscriptions whose filter matches the thing's tags at event time, in
    /// subscription order.
    pub fn matching<'a>(
        &'a self,
        event: &'a Event,
        ontology: &'a OntologyGraph,
    ) -> impl Iterator<Item = (SubscriptionHandle, &'a C)> + 'a {
        self.entries
            .iter()
            .filter(move |(_, (f, _))| match_tags(&event.tags, f, ontology))
            .map(|(id, (_, c))| (SubscriptionHandle(*id), c))
    }
}
