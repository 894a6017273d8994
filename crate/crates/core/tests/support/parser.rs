//! Hand-built syntax trees for the light-control script and the documented
//! condition and query strings, plus a crash fuzzer over all three parsers.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::seq::SliceRandom;
use rand::Rng;
use sre_core::dsl::*;
use sre_core::semantic::{parse_query, FilterExpr, Query, Target, Verb};
use sre_core::Scalar;

use super::golden::SCRIPT;

fn num(n: f64) -> Expr {
    Expr::Number(n)
}

fn s(text: &str) -> Expr {
    Expr::Str(text.into())
}

fn id(name: &str) -> Expr {
    Expr::Ident(name.into())
}

fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    Expr::Binary(op, Box::new(a), Box::new(b))
}

fn field(e: Expr, name: &str) -> Expr {
    Expr::Field(Box::new(e), name.into())
}

fn call(b: Builtin, args: Vec<Expr>) -> Call {
    Call { callee: Callee::Builtin(b), args }
}

fn set(name: &str, value: Expr) -> Stmt {
    Stmt::new(StmtKind::Assign { targets: vec![name.into()], values: vec![value] })
}

fn if_then(cond: Expr, body: Block) -> Stmt {
    Stmt::new(StmtKind::If { branches: vec![(cond, body)], else_block: None })
}

/// The light-control rule as a syntax tree.
pub fn listing_one() -> RuleScript {
    let init = vec![
        Stmt::new(StmtKind::Call(call(
            Builtin::Timer,
            vec![s("LightControl"), s("Control"), num(500.0), num(2000.0), Expr::Unary(UnOp::Neg, Box::new(num(1.0)))],
        ))),
        set("defaultThreshold", num(600.0)),
    ];
    let lux = || id("lux");
    let loop_body = vec![
        set(
            "lux",
            Expr::Call(call(
                Builtin::GetCapability,
                vec![Expr::Index(Box::new(id("lightActuators")), Box::new(id("i"))), s("LuminositySetPoint")],
            )),
        ),
        set("differenceToSet", bin(BinOp::Sub, id("threshold"), field(lux(), "value"))),
        if_then(
            bin(BinOp::Gt, id("differenceToSet"), num(0.0)),
            vec![Stmt::new(StmtKind::Call(call(
                Builtin::SetValue,
                vec![lux(), bin(BinOp::Add, field(lux(), "value"), id("differenceToSet"))],
            )))],
        ),
    ];
    let below = vec![
        set("light_actuators_devices", s("Search Device usage:LightActuator and @loc:Site1")),
        set("lightActuators", Expr::Call(call(Builtin::Query, vec![id("light_actuators_devices")]))),
        Stmt::new(StmtKind::NumericFor {
            var: "i".into(),
            start: num(1.0),
            limit: Expr::Call(Call { callee: Callee::Len, args: vec![id("lightActuators")] }),
            step: Some(num(1.0)),
            body: loop_body,
        }),
    ];
    let control = vec![
        set(
            "threshold",
            Expr::Call(call(Builtin::GetRuleSetting, vec![s("LightControl"), s("threshold")])),
        ),
        if_then(bin(BinOp::Eq, id("threshold"), Expr::Nil), vec![set("threshold", id("defaultThreshold"))]),
        set(
            "averageLuminosityOfSite1_query",
            s("Avg variable usage:LuminositySensor and @loc:Site1"),
        ),
        set(
            "averageLuminosityOfSite1_result",
            Expr::Call(call(Builtin::Query, vec![id("averageLuminosityOfSite1_query")])),
        ),
        if_then(bin(BinOp::Lt, id("averageLuminosityOfSite1_result"), id("threshold")), below),
    ];
    RuleScript {
        rule_name: "LightControl".into(),
        functions: vec![
            FuncDef { name: "init".into(), params: vec![], body: init, line: 0 },
            FuncDef { name: "Control".into(), params: vec![], body: control, line: 0 },
        ],
    }
}

fn term(kind: TermKind, res: &str, cap: Option<&str>, cmp: Comparator, lit: Scalar) -> ConditionExpr {
    ConditionExpr::Term(ConditionTerm {
        kind,
        resource: res.into(),
        capability: cap.map(Into::into),
        comparator: cmp,
        literal: lit,
    })
}

/// Condition strings as written in the language description, with their trees.
pub fn documented_conditions() -> Vec<(&'static str, ConditionExpr)> {
    use Comparator::*;
    use TermKind::*;
    let t = Scalar::Bool(true);
    vec![
        (
            "[MultiSensorA]Temp > 25° C AND\n\n[DoorSensorB]isOpen == True",
            ConditionExpr::and(
                term(Evaluator, "MultiSensorA", Some("Temp"), Gt, Scalar::Number(25.0)),
                term(Evaluator, "DoorSensorB", Some("isOpen"), Eq, t.clone()),
            ),
        ),
        ("[SensorA]Temp>25° C", term(Evaluator, "SensorA", Some("Temp"), Gt, Scalar::Number(25.0))),
        ("@exist[SensorA]\n\n== True", term(Exist, "SensorA", None, Eq, t.clone())),
        ("@change[DoorSensor1]State == True", term(Change, "DoorSensor1", Some("State"), Eq, t.clone())),
        ("@incr[SensorA]Temp == True", term(Incr, "SensorA", Some("Temp"), Eq, t.clone())),
        ("@decr[SensorA]Temp == True", term(Decr, "SensorA", Some("Temp"), Eq, t.clone())),
        ("@exist[Sensor11]\n\n== True", term(Exist, "Sensor11", None, Eq, t.clone())),
        ("[SensorA]Temp = 25", term(Evaluator, "SensorA", Some("Temp"), Eq, Scalar::Number(25.0))),
        ("[SensorA]Temp <= 25", term(Evaluator, "SensorA", Some("Temp"), Le, Scalar::Number(25.0))),
        ("[SensorA]Temp >= 25", term(Evaluator, "SensorA", Some("Temp"), Ge, Scalar::Number(25.0))),
        ("[SensorA]Temp < 25", term(Evaluator, "SensorA", Some("Temp"), Lt, Scalar::Number(25.0))),
        (
            "[A]x > 1 OR [B]y > 2 AND [C]z > 3",
            ConditionExpr::or(
                term(Evaluator, "A", Some("x"), Gt, Scalar::Number(1.0)),
                ConditionExpr::and(
                    term(Evaluator, "B", Some("y"), Gt, Scalar::Number(2.0)),
                    term(Evaluator, "C", Some("z"), Gt, Scalar::Number(3.0)),
                ),
            ),
        ),
    ]
}

/// Query strings from the rule examples, with their trees.
pub fn documented_queries() -> Vec<(&'static str, Query)> {
    let q = |verb, target, filter| Query { verb, target, filter };
    vec![
        (
            "Avg variable usage:LuminositySensor and @loc:Site1",
            q(
                Verb::Avg,
                Target::Variable,
                FilterExpr::and(
                    FilterExpr::term(false, "usage", "LuminositySensor"),
                    FilterExpr::term(true, "location", "Site1"),
                ),
            ),
        ),
        (
            "Search Device usage:LightActuator and @loc:Site1",
            q(
                Verb::Search,
                Target::Device,
                FilterExpr::and(
                    FilterExpr::term(false, "usage", "LightActuator"),
                    FilterExpr::term(true, "location", "Site1"),
                ),
            ),
        ),
    ]
}

/// Checks the script, reference, condition and query trees.
pub fn check_documented() -> Result<usize, String> {
    let parsed = parse_rule(SCRIPT).map_err(|e| format!("light-control script: {e}"))?;
    if parsed != listing_one() {
        return Err(format!("light-control tree differs:\n{parsed:#?}"));
    }
    let mut checked = 1;
    let reference = parse_reference("[SensorA] Temperature").map_err(|e| e.to_string())?;
    if reference != ("SensorA".to_string(), Some("Temperature".to_string())) {
        return Err(format!("reference parsed as {reference:?}"));
    }
    checked += 1;
    for (text, want) in documented_conditions() {
        let got = parse_condition(text).map_err(|e| format!("{text:?}: {e}"))?;
        if got != want {
            return Err(format!("{text:?} parsed as {got:?}"));
        }
        checked += 1;
    }
    for (text, want) in documented_queries() {
        let got = parse_query(text).map_err(|e| format!("{text:?}: {e}"))?;
        if got != want {
            return Err(format!("{text:?} parsed as {got:?}"));
        }
        checked += 1;
    }
    Ok(checked)
}

const SOUP: &[&str] = &[
    "function", "LightControl", ".", "init", "Control", "(", ")", "end", "if", "then", "else", "elseif", "for",
    "while", "do", "return", "local", "not", "and", "or", "nil", "true", "false", "engine", ".", "timer", "query",
    "getCapability", "setValue", "notify", "call", "subscribe", "len", "=", "==", "~=", "!=", "<", "<=", ">",
    ">=", "+", "-", "*", "/", "%", ",", "[", "]", "{", "}", "\"", "\"text\"", "'x'", "1", "2.5", "-3", "1e309",
    "\n", " ", "--", "\t", "@exist", "@change", "@incr", "@decr", "@bogus", "[SensorA]", "Temp", "25° C", "AND",
    "OR", "Search", "Avg", "Count", "Device", "variable", "usage:", "@loc:", "Site1", ":", "\\", "°", "é", "\u{0}",
];

fn random_input(rng: &mut impl Rng) -> String {
    match rng.gen_range(0..4) {
        0 => {
            let len = rng.gen_range(0..128);
            let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        }
        1 => {
            let n = rng.gen_range(0..60);
            (0..n).map(|_| *SOUP.choose(rng).expect("soup")).collect::<Vec<_>>().join("")
        }
        2 => {
            let n = rng.gen_range(0..40);
            (0..n).map(|_| *SOUP.choose(rng).expect("soup")).collect::<Vec<_>>().join(" ")
        }
        _ => {
            // a few edits to a valid script
            let mut chars: Vec<char> = SCRIPT.chars().collect();
            for _ in 0..rng.gen_range(1..6) {
                let at = rng.gen_range(0..=chars.len());
                match rng.gen_range(0..3) {
                    0 if at < chars.len() => {
                        chars.remove(at);
                    }
                    1 => chars.insert(at, *['(', ')', '"', '[', 'd', '\n', '=', '-'].choose(rng).expect("char")),
                    _ => chars.truncate(at),
                }
            }
            chars.into_iter().collect()
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FuzzStats {
    pub inputs: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// Feeds `n` random inputs to the script, condition, reference and query
/// parsers. A panic anywhere is a failure; accepted conditions must also
/// reparse from their formatted text to the same tree.
pub fn fuzz(rng: &mut impl Rng, n: usize) -> Result<FuzzStats, String> {
    let mut stats = FuzzStats::default();
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failure = None;
    for _ in 0..n {
        let input = random_input(rng);
        let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<usize, String> {
            let mut ok = 0;
            ok += parse_rule(&input).is_ok() as usize;
            ok += parse_reference(&input).is_ok() as usize;
            ok += parse_query(&input).is_ok() as usize;
            if let Ok(c) = parse_condition(&input) {
                ok += 1;
                let again = parse_condition(&format_condition(&c)).map_err(|e| e.to_string())?;
                if again != c {
                    return Err("formatted condition reparses differently".into());
                }
            }
            Ok(ok)
        }));
        stats.inputs += 1;
        match outcome {
            Ok(Ok(ok)) => {
                stats.accepted += ok;
                stats.rejected += 4 - ok;
            }
            Ok(Err(e)) => {
                failure = Some(format!("{e} for input {input:?}"));
                break;
            }
            Err(_) => {
                failure = Some(format!("parser panicked on {input:?}"));
                break;
            }
        }
    }
    std::panic::set_hook(hook);
    match failure {
        Some(f) => Err(f),
        None => Ok(stats),
    }
}
