//! Random event traces and conditions, with a brute-force re-statement of
//! the trigger semantics as the oracle for subscription fire logs.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use sre_core::dsl::parse_rule;
use sre_core::registry::{Capability, EventLog, Thing, ThingRegistry, WriteOrigin};
use sre_core::runtime::{NotificationSink, Runtime, RuntimeConfig};
use sre_core::semantic::OntologyGraph;
use sre_core::{Scalar, VirtualClock};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Evaluator,
    Exist,
    Change,
    Incr,
    Decr,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    fn symbol(self) -> &'static str {
        match self {
            Cmp::Eq => "==",
            Cmp::Ne => "!=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lit {
    Num(f64),
    Bool(bool),
    Text(String),
}

#[derive(Debug, Clone)]
pub struct Term {
    pub kind: Kind,
    pub thing: usize,
    /// "Temp" or "On"; unused for Exist.
    pub cap: &'static str,
    pub cmp: Cmp,
    pub lit: Lit,
}

#[derive(Debug, Clone)]
pub enum Cond {
    Term(Term),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
}

#[derive(Debug, Clone)]
pub enum Step {
    Register(usize),
    Deregister(usize),
    Temp(usize, f64),
    On(usize, bool),
}

fn name(thing: usize) -> String {
    format!("D{thing}")
}

fn render_lit(l: &Lit) -> String {
    match l {
        Lit::Num(n) => format!("{n}"),
        Lit::Bool(true) => "True".into(),
        Lit::Bool(false) => "False".into(),
        Lit::Text(s) => format!("\"{s}\""),
    }
}

pub fn render(c: &Cond) -> String {
    match c {
        Cond::Term(t) => {
            let prefix = match t.kind {
                Kind::Evaluator => "",
                Kind::Exist => "@exist",
                Kind::Change => "@change",
                Kind::Incr => "@incr",
                Kind::Decr => "@decr",
            };
            let cap = if t.kind == Kind::Exist { "" } else { t.cap };
            format!("{prefix}[{}]{cap} {} {}", name(t.thing), t.cmp.symbol(), render_lit(&t.lit))
        }
        Cond::And(a, b) => format!("({} AND {})", render(a), render(b)),
        Cond::Or(a, b) => format!("({} OR {})", render(a), render(b)),
    }
}

fn random_term(rng: &mut impl Rng, things: usize) -> Term {
    let thing = rng.gen_range(0..things);
    let kind = [Kind::Evaluator, Kind::Exist, Kind::Change, Kind::Incr, Kind::Decr][rng.gen_range(0..5)];
    let cap = if rng.gen_bool(0.7) { "Temp" } else { "On" };
    if kind != Kind::Evaluator {
        return Term {
            kind,
            thing,
            cap,
            cmp: if rng.gen_bool(0.8) { Cmp::Eq } else { Cmp::Ne },
            lit: Lit::Bool(rng.gen_bool(0.8)),
        };
    }
    let all = [Cmp::Eq, Cmp::Ne, Cmp::Lt, Cmp::Le, Cmp::Gt, Cmp::Ge];
    let (cmp, lit) = match (cap, rng.gen_range(0..10)) {
        (_, 0) => (all[rng.gen_range(0..6)], Lit::Text("warm".into())),
        ("Temp", 1) => (all[rng.gen_range(0..2)], Lit::Bool(rng.gen())),
        ("Temp", _) => (all[rng.gen_range(0..6)], Lit::Num(rng.gen_range(15..26) as f64)),
        (_, 1) => (all[rng.gen_range(2..6)], Lit::Bool(rng.gen())),
        (_, _) => (all[rng.gen_range(0..2)], Lit::Bool(rng.gen())),
    };
    Term { kind, thing, cap, cmp, lit }
}

pub fn random_cond(rng: &mut impl Rng, things: usize, depth: u32) -> Cond {
    if depth == 0 || rng.gen_bool(0.4) {
        return Cond::Term(random_term(rng, things));
    }
    let a = Box::new(random_cond(rng, things, depth - 1));
    let b = Box::new(random_cond(rng, things, depth - 1));
    if rng.gen_bool(0.5) {
        Cond::And(a, b)
    } else {
        Cond::Or(a, b)
    }
}

pub fn random_trace(rng: &mut impl Rng, things: usize, len: usize) -> Vec<Step> {
    (0..len)
        .map(|_| {
            let t = rng.gen_range(0..things);
            match rng.gen_range(0..10) {
                0 => Step::Register(t),
                1 => Step::Deregister(t),
                2..=7 => Step::Temp(t, rng.gen_range(15..26) as f64),
                _ => Step::On(t, rng.gen()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct DeviceState {
    temp: f64,
    on: bool,
}

const INITIAL: DeviceState = DeviceState { temp: 20.0, on: false };

#[derive(Debug, Clone)]
enum Ev {
    Presence { thing: usize, appeared: bool },
    Value { thing: usize, cap: &'static str, old: Lit, new: Lit },
}

fn compare(cmp: Cmp, actual: &Lit, lit: &Lit) -> bool {
    use std::cmp::Ordering;
    let ord = match (actual, lit) {
        (Lit::Num(a), Lit::Num(b)) => a.partial_cmp(b),
        (Lit::Text(a), Lit::Text(b)) => Some(a.cmp(b)),
        (Lit::Bool(a), Lit::Bool(b)) => {
            return match cmp {
                Cmp::Eq => a == b,
                Cmp::Ne => a != b,
                _ => false,
            }
        }
        _ => return cmp == Cmp::Ne,
    };
    match (cmp, ord) {
        (Cmp::Eq, o) => o == Some(Ordering::Equal),
        (Cmp::Ne, o) => o != Some(Ordering::Equal),
        (_, None) => false,
        (Cmp::Lt, Some(o)) => o == Ordering::Less,
        (Cmp::Le, Some(o)) => o != Ordering::Greater,
        (Cmp::Gt, Some(o)) => o == Ordering::Greater,
        (Cmp::Ge, Some(o)) => o != Ordering::Less,
    }
}

fn relevant(c: &Cond, ev: &Ev) -> bool {
    match c {
        Cond::Term(t) => match ev {
            Ev::Presence { thing, .. } => t.kind == Kind::Exist && *thing == t.thing,
            Ev::Value { thing, cap, .. } => t.kind != Kind::Exist && *thing == t.thing && *cap == t.cap,
        },
        Cond::And(a, b) | Cond::Or(a, b) => relevant(a, ev) || relevant(b, ev),
    }
}

fn truth(c: &Cond, ev: &Ev, world: &BTreeMap<usize, DeviceState>) -> bool {
    match c {
        Cond::And(a, b) => truth(a, ev, world) && truth(b, ev, world),
        Cond::Or(a, b) => truth(a, ev, world) || truth(b, ev, world),
        Cond::Term(t) => {
            if t.kind == Kind::Evaluator {
                return match world.get(&t.thing) {
                    Some(s) => {
                        let actual = if t.cap == "Temp" { Lit::Num(s.temp) } else { Lit::Bool(s.on) };
                        compare(t.cmp, &actual, &t.lit)
                    }
                    None => false,
                };
            }
            let observed = match t.kind {
                Kind::Exist => world.contains_key(&t.thing),
                _ => match ev {
                    Ev::Value { thing, cap, old, new } if *thing == t.thing && *cap == t.cap => match (t.kind, old, new) {
                        (Kind::Change, _, _) => true,
                        (Kind::Incr, Lit::Num(o), Lit::Num(n)) => n > o,
                        (Kind::Decr, Lit::Num(o), Lit::Num(n)) => n < o,
                        _ => false,
                    },
                    _ => false,
                },
            };
            let want = t.lit == Lit::Bool(true);
            if t.cmp == Cmp::Ne {
                observed != want
            } else {
                observed == want
            }
        }
    }
}

/// Expected fire log: for each step, the indices of subscriptions whose
/// callback runs, in subscription order.
pub fn oracle(conds: &[Cond], trace: &[Step], initially_present: &[usize]) -> Vec<Vec<usize>> {
    let mut world: BTreeMap<usize, DeviceState> = initially_present.iter().map(|&t| (t, INITIAL)).collect();
    let mut log = Vec::new();
    for step in trace {
        let ev = match *step {
            Step::Register(t) if !world.contains_key(&t) => {
                world.insert(t, INITIAL);
                Some(Ev::Presence { thing: t, appeared: true })
            }
            Step::Deregister(t) if world.contains_key(&t) => {
                world.remove(&t);
                Some(Ev::Presence { thing: t, appeared: false })
            }
            Step::Temp(t, v) => match world.get_mut(&t) {
                Some(s) if s.temp != v => {
                    let old = s.temp;
                    s.temp = v;
                    Some(Ev::Value { thing: t, cap: "Temp", old: Lit::Num(old), new: Lit::Num(v) })
                }
                _ => None,
            },
            Step::On(t, v) => match world.get_mut(&t) {
                Some(s) if s.on != v => {
                    let old = s.on;
                    s.on = v;
                    Some(Ev::Value { thing: t, cap: "On", old: Lit::Bool(old), new: Lit::Bool(v) })
                }
                _ => None,
            },
            _ => None,
        };
        let fired = match &ev {
            Some(ev) => (0..conds.len())
                .filter(|&i| relevant(&conds[i], ev) && truth(&conds[i], ev, &world))
                .collect(),
            None => Vec::new(),
        };
        log.push(fired);
    }
    log
}

fn device(t: usize) -> Thing {
    Thing::new(name(t))
        .tag("location", "Lab")
        .capability(Capability::new("Temp", INITIAL.temp, false))
        .capability(Capability::new("On", INITIAL.on, true))
}

/// Runs the trace through the registry and runtime, one rule per
/// condition, and returns the observed fire log.
pub fn actual(conds: &[Cond], trace: &[Step], initially_present: &[usize]) -> Result<Vec<Vec<usize>>, String> {
    let clock = Arc::new(VirtualClock::new(0));
    let events = Arc::new(EventLog::new());
    let registry = Arc::new(ThingRegistry::new(clock.clone(), events.clone()));
    for &t in initially_present {
        registry.register_thing(device(t)).map_err(|e| e.to_string())?;
    }
    events.take();
    let mut rt = Runtime::new(
        registry.clone(),
        Arc::new(OntologyGraph::empty()),
        clock,
        Arc::new(NotificationSink::new(16)),
        RuntimeConfig::default(),
    );
    let fired: Arc<Mutex<Vec<usize>>> = Arc::default();
    {
        let fired = fired.clone();
        rt.set_callback_probe(move |rule, _| {
            let idx = rule.trim_start_matches('R').parse().expect("rule index");
            fired.lock().unwrap().push(idx);
        });
    }
    for (i, c) in conds.iter().enumerate() {
        let text = render(c).replace('"', "\\\"");
        let src = format!(
            "function R{i}.init()\n  engine.subscribe(\"{text}\", \"Hit\")\nend\n\nfunction R{i}.Hit(a, b, c)\n  hits = 1\nend\n"
        );
        let script = parse_rule(&src).map_err(|e| format!("{e} in {src}"))?;
        rt.start_rule(&format!("R{i}"), Arc::new(script), i as u64)
            .map_err(|e| format!("{e} for condition {}", render(c)))?;
    }
    let mut log = Vec::new();
    for step in trace {
        let _ = match *step {
            Step::Register(t) => registry.register_thing(device(t)),
            Step::Deregister(t) => registry.deregister_thing(&name(t)),
            Step::Temp(t, v) => registry.set_capability_value(&name(t), "Temp", Scalar::Number(v), WriteOrigin::Device),
            Step::On(t, v) => registry.set_capability_value(&name(t), "On", Scalar::Bool(v), WriteOrigin::Device),
        };
        for e in events.take() {
            rt.dispatch_event(&e, None);
        }
        log.push(std::mem::take(&mut *fired.lock().unwrap()));
    }
    Ok(log)
}

/// One random case: conditions, trace and the comparison.
pub fn check_case(rng: &mut impl Rng) -> Result<usize, String> {
    let things = rng.gen_range(1..=5);
    let conds: Vec<Cond> = (0..rng.gen_range(1..=6)).map(|_| random_cond(rng, things, 3)).collect();
    let present: Vec<usize> = (0..things).filter(|_| rng.gen_bool(0.7)).collect();
    let len = rng.gen_range(1..=200);
    let trace = random_trace(rng, things, len);
    let expected = oracle(&conds, &trace, &present);
    let got = actual(&conds, &trace, &present)?;
    if let Some(step) = (0..trace.len()).find(|&i| expected[i] != got[i]) {
        let conds: Vec<String> = conds.iter().map(render).collect();
        return Err(format!(
            "step {step} ({:?}): fired {:?}, oracle {:?}; conditions {conds:?}",
            trace[step], got[step], expected[step]
        ));
    }
    Ok(expected.iter().map(Vec::len).sum())
}
