//! Condition evaluation against a triggering event and the registry.

use crate::dsl::{Comparator, ConditionExpr, ConditionTerm, TermKind};
use crate::registry::{Event, EventKind, ThingRegistry};
use crate::scalar::Scalar;

/// Whether `event` can change the truth of `term`. A subscription is
/// evaluated only for events relevant to at least one of its terms.
pub fn term_is_relevant(term: &ConditionTerm, event: &Event) -> bool {
    if event.thing_id != term.resource {
        return false;
    }
    match term.kind {
        TermKind::Exist => matches!(event.kind, EventKind::Appeared | EventKind::Disappeared),
        _ => event.kind == EventKind::ValueChanged && event.capability == term.capability,
    }
}

pub fn is_relevant(cond: &ConditionExpr, event: &Event) -> bool {
    match cond {
        ConditionExpr::Term(t) => term_is_relevant(t, event),
        ConditionExpr::And(a, b) | ConditionExpr::Or(a, b) => {
            is_relevant(a, event) || is_relevant(b, event)
        }
    }
}

fn edge(term: &ConditionTerm, event: &Event, pred: Option<fn(f64, f64) -> bool>) -> bool {
    let is_change = event.kind == EventKind::ValueChanged
        && event.thing_id == term.resource
        && event.capability == term.capability;
    if !is_change {
        return false;
    }
    let Some(pred) = pred else {
        return true;
    };
    match (&event.old_value, &event.new_value) {
        (Some(Scalar::Number(old)), Some(Scalar::Number(new))) => pred(*old, *new),
        _ => false,
    }
}

fn term_truth(term: &ConditionTerm, event: &Event, registry: &ThingRegistry) -> bool {
    let observed = match term.kind {
        TermKind::Evaluator => {
            let Some(cap) = &term.capability else {
                return false;
            };
            return match registry.value_of(&term.resource, cap) {
                Some(v) => term.comparator.apply(&v, &term.literal),
                None => false,
            };
        }
        TermKind::Exist => {
            if event.thing_id == term.resource && event.kind != EventKind::ValueChanged {
                event.kind == EventKind::Appeared
            } else {
                registry.contains(&term.resource)
            }
        }
        TermKind::Change => edge(term, event, None),
        TermKind::Incr => edge(term, event, Some(|old, new| new > old)),
        TermKind::Decr => edge(term, event, Some(|old, new| new < old)),
    };
    let expected = matches!(term.literal, Scalar::Bool(true));
    match term.comparator {
        Comparator::Ne => observed != expected,
        _ => observed == expected,
    }
}

/// Evaluates a condition for one triggering event.
///
/// Evaluator terms read current registry values and are false when the
/// resource or capability is missing. Exist terms follow the event when it is
/// an appearance or disappearance of their resource. Change, Incr and Decr
/// terms are true only for a value change of their exact capability.
pub fn evaluate_condition(cond: &ConditionExpr, event: &Event, registry: &ThingRegistry) -> bool {
    match cond {
        ConditionExpr::Term(t) => term_truth(t, event, registry),
        ConditionExpr::And(a, b) => {
            evaluate_condition(a, event, registry) && evaluate_condition(b, event, registry)
        }
        ConditionExpr::Or(a, b) => {
            evaluate_condition(a, event, registry) || evaluate_condition(b, event, registry)
        }
    }
}
