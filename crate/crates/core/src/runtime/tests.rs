use std::sync::{Arc, Mutex};

use proptest::prelude::*;

use super::*;
use crate::clock::VirtualClock;
use crate::dsl::{parse_rule, BinOp};
use crate::registry::{Capability, EventLog, Thing, WriteOrigin};
use crate::semantic::load_ontology;

struct Harness {
    rt: Runtime,
    reg: Arc<ThingRegistry>,
    log: Arc<EventLog>,
    clock: Arc<VirtualClock>,
    next_order: u64,
}

impl Harness {
    fn new() -> Self {
        let log = Arc::new(EventLog::new());
        let clock = Arc::new(VirtualClock::new(0));
        let reg = Arc::new(ThingRegistry::new(clock.clone(), log.clone()));
        let onto = load_ontology(
            r#"{"nodes": ["Room1", "Room2", "Site1"], "edges": [
              {"child": "Room1", "relation": "within", "parent": "Site1"},
              {"child": "Room2", "relation": "within", "parent": "Site1"}]}"#,
        )
        .unwrap();
        let rt = Runtime::new(
            reg.clone(),
            Arc::new(onto),
            clock.clone(),
            Arc::new(NotificationSink::new(1000)),
            RuntimeConfig::default(),
        );
        Self { rt, reg, log, clock, next_order: 1 }
    }

    fn start(&mut self, src: &str) -> Result<String, RuntimeError> {
        let script = Arc::new(parse_rule(src).unwrap());
        let name = script.rule_name.clone();
        self.next_order += 1;
        self.rt.start_rule(&name, script, self.next_order)?;
        Ok(name)
    }

    /// Dispatches queued registry events until none are left.
    fn pump(&mut self) -> usize {
        let mut n = 0;
        loop {
            let events = self.log.take();
            if events.is_empty() {
                return n;
            }
            for e in events {
                self.rt.dispatch_event(&e, None);
                n += 1;
            }
        }
    }

    fn advance_to(&mut self, t: u64) {
        while let Some(due) = self.rt.next_due().filter(|d| *d <= t) {
            self.clock.set(due);
            for fire in self.rt.take_due(due) {
                self.rt.fire_timer(&fire);
                self.pump();
            }
        }
        self.clock.set(t);
    }

    fn write(&mut self, id: &str, cap: &str, v: impl Into<Scalar>) {
        self.reg.set_capability_value(id, cap, v.into(), WriteOrigin::Device).unwrap();
    }

    fn messages(&self) -> Vec<String> {
        self.rt.notifications().recent().into_iter().map(|n| n.message).collect()
    }
}

fn sensor(id: &str, room: &str, temp: f64) -> Thing {
    Thing::new(id)
        .tag("location", room)
        .tag("usage", "TemperatureSensor")
        .capability(Capability::new("Temp", temp, false))
}

#[test]
fn timer_registered_by_init() {
    let mut h = Harness::new();
    h.start(include_str!("../../fixtures/lightcontrol.rs.sre")).unwrap();
    let timers = h.rt.timers();
    assert_eq!(timers.len(), 1);
    let t = &timers[0];
    assert_eq!((t.initial_delay, t.period, t.count), (500, 2000, -1));
    assert_eq!(t.function, "Control");
    assert_eq!(h.rt.global("LightControl", "defaultThreshold"), Some(Value::Number(600.0)));
}

#[test]
fn init_failure_leaves_rule_stopped() {
    let mut h = Harness::new();
    let err = h
        .start("function Bad.init()\n  engine.timer(\"Bad\", \"init\", 0, 10, -1)\n  x = 1 / 0\nend\n")
        .unwrap_err();
    assert_eq!(err.code, "RuntimeError");
    assert_eq!(err.line, 3);
    assert!(!h.rt.is_running("Bad"));
    assert!(h.rt.timers().is_empty());
    let err = h.rt.call_function("Bad", "init", vec![]).unwrap_err();
    assert_eq!(err.code, "RuleNotStarted");
}

#[test]
fn environments_are_isolated() {
    let mut h = Harness::new();
    h.start("function A.init()\n  x = 1\nend\nfunction A.bump()\n  x = x + 1\nend\n").unwrap();
    h.start("function B.init()\n  x = 100\nend\nfunction B.get()\n  return x\nend\n").unwrap();
    h.rt.call_function("A", "bump", vec![]).unwrap();
    assert_eq!(h.rt.global("A", "x"), Some(Value::Number(2.0)));
    assert_eq!(h.rt.call_function("B", "get", vec![]).unwrap(), vec![Value::Number(100.0)]);
}

#[test]
fn finite_timer_fires_exactly_count_times() {
    let mut h = Harness::new();
    h.start("function T.init()\n  n = 0\n  engine.timer(\"T\", \"tick\", 0, 100, 3)\nend\nfunction T.tick()\n  n = n + 1\nend\n")
        .unwrap();
    h.advance_to(10_000);
    assert_eq!(h.rt.global("T", "n"), Some(Value::Number(3.0)));
    assert!(h.rt.timers().is_empty());
}

#[test]
fn periodic_timer_fire_times() {
    let mut h = Harness::new();
    h.start("function T.init()\n  engine.timer(\"T\", \"tick\", 500, 2000, -1)\nend\nfunction T.tick()\n  engine.notify(\"info\", \"tick\")\nend\n")
        .unwrap();
    h.advance_to(499);
    assert!(h.messages().is_empty());
    h.advance_to(4_500);
    let at: Vec<u64> = h.rt.notifications().recent().iter().map(|n| n.at).collect();
    assert_eq!(at, vec![500, 2500, 4500]);
    h.rt.stop_rule("T");
    h.advance_to(100_000);
    assert_eq!(h.rt.notifications().len(), 3);
}

#[test]
fn bad_timer_args() {
    let mut h = Harness::new();
    for (args, code) in [
        ("\"T\", \"init\", 0, 0, 1", "BadTimerArgs"),
        ("\"T\", \"init\", -1, 10, 1", "BadTimerArgs"),
        ("\"T\", \"init\", 0, 10, 0", "BadTimerArgs"),
        ("\"T\", \"init\", 0, 10, 1.5", "BadTimerArgs"),
        ("\"Other\", \"init\", 0, 10, 1", "BadTimerArgs"),
        ("\"T\", \"nope\", 0, 10, 1", "UnknownFunction"),
    ] {
        let err = h.start(&format!("function T.init()\n  engine.timer({args})\nend\n")).unwrap_err();
        assert_eq!(err.code, code, "{args}");
    }
}

#[test]
fn query_builtin() {
    let mut h = Harness::new();
    h.reg.register_thing(sensor("S1", "Room1", 300.0)).unwrap();
    h.reg.register_thing(sensor("S2", "Room2", 500.0)).unwrap();
    h.start(
        r#"function Q.init()
  avg = engine.query("Avg variable usage:TemperatureSensor and @location:Site1")
  ids = engine.query("Search Device @location:Site1")
  n = len(ids)
  first = ids[1]
  missing = ids[3]
  bad, msg = engine.query("Avg variable usage:")
  none, why = engine.query("Avg variable usage:Nothing")
end
"#,
    )
    .unwrap();
    let g = |k: &str| h.rt.global("Q", k);
    assert_eq!(g("avg"), Some(Value::Number(400.0)));
    assert_eq!(g("n"), Some(Value::Number(2.0)));
    assert_eq!(g("first"), Some(Value::str("S1")));
    assert_eq!(g("missing"), None);
    assert_eq!(g("bad"), None);
    assert!(g("msg").unwrap().as_str().unwrap().starts_with("SyntaxError"));
    assert!(g("why").unwrap().as_str().unwrap().starts_with("EmptyAggregate"));
}

#[test]
fn rule_settings() {
    let mut h = Harness::new();
    let src = "function S.init()\nend\nfunction S.read(rule)\n  local t = engine.getRuleSetting(rule, \"threshold\")\n  if t == nil then t = 600 end\n  return t\nend\n";
    h.start(src).unwrap();
    let read = |h: &mut Harness, rule: &str| h.rt.call_function("S", "read", vec![Value::str(rule)]).unwrap();
    assert_eq!(read(&mut h, "S"), vec![Value::Number(600.0)]);
    h.rt.set_setting("S", "threshold", Scalar::Number(550.0));
    assert_eq!(read(&mut h, "S"), vec![Value::Number(550.0)]);
    h.rt.set_setting("Other", "threshold", Scalar::Number(10.0));
    assert_eq!(read(&mut h, "Other"), vec![Value::Number(10.0)]);
}

#[test]
fn set_value_rules() {
    let mut h = Harness::new();
    h.reg.register_thing(sensor("S1", "Room1", 20.0)).unwrap();
    h.reg
        .register_thing(Thing::new("L1").capability(Capability::new("SetPoint", 450.0, true)))
        .unwrap();
    h.log.take();
    h.start(
        r#"function W.init()
end
function W.raise()
  local c = engine.getCapability("L1", "SetPoint")
  engine.setValue(c, c.value + 150)
end
function W.sensor()
  engine.setValue("S1", "Temp", 1)
end
function W.wrongType()
  engine.setValue("L1", "SetPoint", "high")
end
"#,
    )
    .unwrap();
    h.rt.call_function("W", "raise", vec![]).unwrap();
    assert_eq!(h.reg.value_of("L1", "SetPoint"), Some(Scalar::Number(600.0)));
    assert_eq!(h.rt.call_function("W", "sensor", vec![]).unwrap_err().code, "NotWritable");
    assert_eq!(h.rt.call_function("W", "wrongType", vec![]).unwrap_err().code, "TypeMismatch");
}

#[test]
fn exist_subscription_fires_once() {
    let mut h = Harness::new();
    h.start(
        r#"function D.init()
  engine.subscribe("@exist[Sensor11] == True", "found")
end
function D.found(id, appeared)
  engine.notify("info", id, appeared)
end
"#,
    )
    .unwrap();
    h.reg.register_thing(sensor("Other", "Room1", 1.0)).unwrap();
    h.reg.register_thing(sensor("Sensor11", "Room1", 1.0)).unwrap();
    h.write("Sensor11", "Temp", 2.0);
    h.pump();
    assert_eq!(h.messages(), vec!["Sensor11 true"]);
}

#[test]
fn evaluator_refires_while_true_and_cancel_stops() {
    let mut h = Harness::new();
    h.reg.register_thing(sensor("A", "Room1", 20.0)).unwrap();
    h.start(
        r#"function E.init()
  handle = engine.subscribe("[A]Temp > 25", "hot")
end
function E.hot(id, cap, v)
  engine.notify("info", v)
end
"#,
    )
    .unwrap();
    for v in [26.0, 27.0, 24.0, 30.0] {
        h.write("A", "Temp", v);
        h.pump();
    }
    assert_eq!(h.messages(), vec!["26", "27", "30"]);
    let handle = h.rt.global("E", "handle").unwrap().as_f64().unwrap() as u64;
    assert!(h.rt.cancel_subscription(handle));
    h.write("A", "Temp", 31.0);
    h.pump();
    assert_eq!(h.messages().len(), 3);
}

#[test]
fn semantic_subscription_follows_tags() {
    let mut h = Harness::new();
    h.start(
        r#"function Sem.init()
  engine.subscribe("subscribe usage:TemperatureSensor and @location:Site1", "seen")
end
function Sem.seen(id, x, v)
  engine.notify("info", id, x, v)
end
"#,
    )
    .unwrap();
    h.reg.register_thing(sensor("A", "Room1", 1.0)).unwrap();
    h.reg.register_thing(Thing::new("Lamp").tag("location", "Room1")).unwrap();
    h.reg.deregister_thing("A").unwrap();
    h.reg.register_thing(sensor("A2", "Room2", 1.0)).unwrap();
    h.write("A2", "Temp", 5.0);
    h.pump();
    assert_eq!(h.messages(), vec!["A true nil", "A false nil", "A2 true nil", "A2 Temp 5"]);
}

#[test]
fn callbacks_run_in_install_order_and_errors_do_not_stop_dispatch() {
    let mut h = Harness::new();
    h.reg.register_thing(sensor("A", "Room1", 20.0)).unwrap();
    for name in ["First", "Broken", "Second"] {
        let body = if name == "Broken" { "x = nil + 1" } else { "engine.notify(\"info\", \"RULE\")" };
        h.start(&format!(
            "function {name}.init()\n  engine.subscribe(\"@change[A]Temp == true\", \"cb\")\nend\nfunction {name}.cb()\n  {}\nend\n",
            body.replace("RULE", name)
        ))
        .unwrap();
    }
    h.write("A", "Temp", 21.0);
    h.write("A", "Temp", 22.0);
    h.pump();
    assert_eq!(h.messages(), vec!["First", "Second", "First", "Second"]);
    assert_eq!(h.rt.recent_errors().len(), 2);
    assert!(h.rt.is_running("Broken"));
}

#[test]
fn writes_from_callbacks_are_queued() {
    let mut h = Harness::new();
    h.reg.register_thing(sensor("A", "Room1", 0.0)).unwrap();
    h.reg
        .register_thing(Thing::new("Out").capability(Capability::new("n", 0.0, true)))
        .unwrap();
    h.start(
        r#"function Q.init()
  engine.subscribe("@change[A]Temp == true", "onA")
  engine.subscribe("@change[Out]n == true", "onOut")
end
function Q.onA(id, cap, v)
  engine.notify("info", "A start")
  engine.setValue("Out", "n", v)
  engine.notify("info", "A end")
end
function Q.onOut(id, cap, v)
  engine.notify("info", "Out", v)
end
"#,
    )
    .unwrap();
    h.write("A", "Temp", 5.0);
    h.pump();
    assert_eq!(h.messages(), vec!["A start", "A end", "Out 5"]);
}

#[test]
fn shared_function_through_call() {
    let mut h = Harness::new();
    h.start("function Notifier.init()\nend\nfunction Notifier.sendAlert(what)\n  engine.notify(\"alarm\", what)\n  return 1\nend\n")
        .unwrap();
    h.start("function R1.init()\n  ok = engine.call(\"Notifier\", \"sendAlert\", \"overheat\")\nend\n").unwrap();
    h.start("function R2.init()\n  engine.call(\"Notifier\", \"sendAlert\", \"overheat\")\nend\n").unwrap();
    assert_eq!(h.messages(), vec!["overheat", "overheat"]);
    assert!(h.rt.notifications().recent().iter().all(|n| n.rule == "Notifier"));
    assert_eq!(h.rt.global("R1", "ok"), Some(Value::Number(1.0)));
}

#[test]
fn call_errors() {
    let mut h = Harness::new();
    h.start("function Idle.init()\nend\n").unwrap();
    h.rt.stop_rule("Idle");
    h.start("function C.init()\nend\nfunction C.go(r, f)\n  engine.call(r, f)\nend\n").unwrap();
    let go = |h: &mut Harness, r: &str, f: &str| {
        h.rt.call_function("C", "go", vec![Value::str(r), Value::str(f)]).unwrap_err().code
    };
    assert_eq!(go(&mut h, "Idle", "init"), "RuleNotStarted");
    assert_eq!(go(&mut h, "Ghost", "init"), "UnknownRule");
    assert_eq!(go(&mut h, "C", "nope"), "UnknownFunction");
}

#[test]
fn mutual_recursion_hits_call_depth() {
    let mut h = Harness::new();
    h.start("function A.init()\n  depth = 0\nend\nfunction A.ping(n)\n  depth = n\n  engine.call(\"B\", \"pong\", n + 1)\nend\n").unwrap();
    h.start("function B.init()\nend\nfunction B.pong(n)\n  engine.call(\"A\", \"ping\", n + 1)\nend\n").unwrap();
    let err = h.rt.call_function("A", "ping", vec![Value::Number(0.0)]).unwrap_err();
    assert_eq!(err.code, "CallDepthExceeded");
    // eight nested engine.call frames ran: A(0) B(1) A(2) ... A(8)
    assert_eq!(h.rt.global("A", "depth"), Some(Value::Number(8.0)));
}

#[test]
fn local_recursion_is_bounded() {
    let mut h = Harness::new();
    h.start("function L.init()\nend\nfunction L.f(n)\n  return f(n + 1)\nend\n").unwrap();
    let err = h.rt.call_function("L", "f", vec![Value::Number(0.0)]).unwrap_err();
    assert!(err.message.contains("frames"), "{err}");
}

#[test]
fn infinite_loop_hits_budget() {
    let mut h = Harness::new();
    let err = h.start("function Spin.init()\n  while true do\n  end\nend\n").unwrap_err();
    assert!(err.message.contains("budget"), "{err}");
}

#[test]
fn lua_semantics() {
    let mut h = Harness::new();
    h.start(
        r#"function L.init()
  a = nil or 5
  b = false and 1
  c = 0 and "zero is true"
  d = -7 % 3
  e = 7 % -3
  local x = 1
  if true then
    local x = 2
    y = x
  end
  z = x
  s = len("héllo")
  total = 0
  for i = 10, 1, -3 do total = total + i end
  for i = 1, 0 do never = true end
end
"#,
    )
    .unwrap();
    let g = |k: &str| h.rt.global("L", k);
    assert_eq!(g("a"), Some(Value::Number(5.0)));
    assert_eq!(g("b"), Some(Value::Bool(false)));
    assert_eq!(g("c"), Some(Value::str("zero is true")));
    assert_eq!(g("d"), Some(Value::Number(2.0)));
    assert_eq!(g("e"), Some(Value::Number(-2.0)));
    assert_eq!(g("y"), Some(Value::Number(2.0)));
    assert_eq!(g("z"), Some(Value::Number(1.0)));
    assert_eq!(g("x"), None, "locals are not globals");
    assert_eq!(g("s"), Some(Value::Number(5.0)));
    assert_eq!(g("total"), Some(Value::Number(22.0)));
    assert_eq!(g("never"), None);
}

#[test]
fn runtime_errors_name_line() {
    let mut h = Harness::new();
    for (body, needle) in [
        ("x = 1 + \"a\"", "arithmetic"),
        ("x = 1 < \"a\"", "compare"),
        ("x = nil\n  y = x[1]", "index"),
        ("x = 5 % 0", "modulo by zero"),
        ("x = (1).value", "field"),
        ("for i = 1, 2, 0 do end", "step"),
    ] {
        let err = h.start(&format!("function X.init()\n  {body}\nend\n")).unwrap_err();
        assert!(err.message.contains(needle), "{body}: {err}");
        assert!(err.line >= 2);
    }
}

#[test]
fn ten_thousand_notifications_do_not_block() {
    let mut h = Harness::new();
    h.start("function N.init()\n  for i = 1, 10000 do engine.notify(\"info\", i) end\nend\n").unwrap();
    let sink = h.rt.notifications();
    assert_eq!(sink.total(), 10_000);
    assert_eq!(sink.len(), 1000);
    assert_eq!(sink.dropped(), 9_000);
}

#[derive(Debug, Clone)]
enum Arith {
    Num(i32),
    Bin(BinOp, Box<Arith>, Box<Arith>),
    Neg(Box<Arith>),
}

fn arb_arith() -> impl Strategy<Value = Arith> {
    (-50i32..50).prop_map(Arith::Num).prop_recursive(5, 40, 2, |inner| {
        prop_oneof![
            (
                prop::sample::select(vec![
                    BinOp::Add,
                    BinOp::Sub,
                    BinOp::Mul,
                    BinOp::Div,
                    BinOp::Mod,
                    BinOp::Lt,
                    BinOp::Eq
                ]),
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| Arith::Bin(op, Box::new(a), Box::new(b))),
            inner.prop_map(|a| Arith::Neg(Box::new(a))),
        ]
    })
}

#[derive(Debug, Clone, PartialEq)]
enum RefVal {
    N(f64),
    B(bool),
}

/// Independent evaluator: `None` marks a runtime error.
fn reference(e: &Arith) -> Option<RefVal> {
    Some(match e {
        Arith::Num(n) => RefVal::N(*n as f64),
        Arith::Neg(a) => match reference(a)? {
            RefVal::N(x) => RefVal::N(-x),
            RefVal::B(_) => return None,
        },
        Arith::Bin(op, a, b) => {
            let (a, b) = (reference(a)?, reference(b)?);
            if *op == BinOp::Eq {
                return Some(RefVal::B(a == b));
            }
            let (RefVal::N(x), RefVal::N(y)) = (a, b) else {
                return None;
            };
            match op {
                BinOp::Add => RefVal::N(x + y),
                BinOp::Sub => RefVal::N(x - y),
                BinOp::Mul => RefVal::N(x * y),
                BinOp::Div if y == 0.0 => return None,
                BinOp::Div => RefVal::N(x / y),
                BinOp::Mod if y == 0.0 => return None,
                BinOp::Mod => RefVal::N(x - y * (x / y).floor()),
                BinOp::Lt => RefVal::B(x < y),
                _ => unreachable!(),
            }
        }
    })
}

fn to_text(e: &Arith) -> String {
    match e {
        Arith::Num(n) if *n < 0 => format!("({n})"),
        Arith::Num(n) => n.to_string(),
        Arith::Neg(a) => format!("-({})", to_text(a)),
        Arith::Bin(op, a, b) => format!("({} {} {})", to_text(a), op.symbol(), to_text(b)),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn interpreter_matches_reference_arithmetic(e in arb_arith()) {
        let mut h = Harness::new();
        let src = format!("function X.init()\n  r = {}\nend\n", to_text(&e));
        let got = h.start(&src);
        match reference(&e) {
            None => prop_assert!(got.is_err()),
            Some(expected) => {
                prop_assert!(got.is_ok(), "{:?}", got);
                let actual = h.rt.global("X", "r").unwrap();
                let actual = match actual {
                    Value::Number(n) => RefVal::N(n),
                    Value::Bool(b) => RefVal::B(b),
                    other => panic!("unexpected {other:?}"),
                };
                match (&actual, &expected) {
                    (RefVal::N(a), RefVal::N(b)) if a.is_nan() && b.is_nan() => {}
                    _ => prop_assert_eq!(actual, expected),
                }
            }
        }
    }

    #[test]
    fn globals_never_leak_between_rules(
        names in prop::collection::vec("[a-e]", 1..6),
        values in prop::collection::vec(-1000i32..1000, 1..6),
    ) {
        let mut h = Harness::new();
        h.start("function B.init()\n  a = 1\n  b = 2\nend\nfunction B.snapshot()\n  return a, b, c, d, e\nend\n").unwrap();
        let before = h.rt.call_function("B", "snapshot", vec![]).unwrap();
        let mut body = String::new();
        for (n, v) in names.iter().zip(values.iter()) {
            body.push_str(&format!("  {n} = {v}\n"));
        }
        h.start(&format!("function A.init()\n{body}end\n")).unwrap();
        let after = h.rt.call_function("B", "snapshot", vec![]).unwrap();
        prop_assert_eq!(before, after);
        prop_assert_eq!(h.rt.globals("B").len(), 2);
    }
}

#[test]
fn determinism_of_notification_log() {
    let run = || {
        let mut h = Harness::new();
        h.reg.register_thing(sensor("A", "Room1", 0.0)).unwrap();
        h.start("function D.init()\n  engine.subscribe(\"@incr[A]Temp == true\", \"up\")\n  engine.timer(\"D\", \"tick\", 5, 7, 20)\nend\nfunction D.up(id, c, v)\n  engine.notify(\"up\", v)\nend\nfunction D.tick()\n  engine.notify(\"tick\", \"t\")\nend\n")
            .unwrap();
        let shared = Arc::new(Mutex::new(0u64));
        let mut x = 0.0;
        for t in 0..100u64 {
            h.advance_to(t * 3);
            x = (x * 7.0 + 3.0) % 11.0;
            h.write("A", "Temp", x);
            h.pump();
            *shared.lock().unwrap() += 1;
        }
        h.rt.notifications().recent()
    };
    assert_eq!(run(), run());
}
