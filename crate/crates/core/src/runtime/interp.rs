use std::sync::Arc;

use super::{CapabilityRef, Runtime, RuntimeConfig, RuntimeError, TimerInfo, TimerSpec, Trigger, Value};
use crate::dsl::{parse_condition, BinOp, Block, Builtin, Call, Callee, Expr, RuleScript, Stmt, StmtKind, UnOp};
use crate::registry::WriteOrigin;
use crate::semantic::{eval_query, parse_query, QueryResult};

/// Budgets for one dispatched work item.
pub(super) struct Exec {
    steps: u64,
    budget: u64,
    calls: usize,
    frames: usize,
    max_calls: usize,
    max_frames: usize,
}

impl Exec {
    pub(super) fn new(config: &RuntimeConfig) -> Self {
        Self {
            steps: 0,
            budget: config.step_budget,
            calls: 0,
            frames: 0,
            max_calls: config.max_call_depth,
            max_frames: config.max_frames,
        }
    }
}

enum Flow {
    Normal,
    Return(Vec<Value>),
}

/// Function-local state: the rule being run and its local variables, with
/// block scopes delimited by stack length.
struct Frame<'a> {
    rule: &'a str,
    script: &'a RuleScript,
    locals: Vec<(String, Value)>,
}

type R<T> = Result<T, RuntimeError>;

fn err(frame: &Frame<'_>, message: impl Into<String>) -> RuntimeError {
    RuntimeError::new("RuntimeError", frame.rule, message)
}

fn num(frame: &Frame<'_>, v: &Value, what: &str) -> R<f64> {
    v.as_f64().ok_or_else(|| {
        err(frame, format!("attempt to perform arithmetic on a {} value ({what})", v.type_name()))
    })
}

fn arg<'v>(args: &'v [Value], i: usize) -> &'v Value {
    args.get(i).unwrap_or(&Value::Nil)
}

fn text_arg<'v>(frame: &Frame<'_>, b: Builtin, args: &'v [Value], i: usize) -> R<&'v str> {
    arg(args, i).as_str().ok_or_else(|| {
        err(
            frame,
            format!("{b}: argument {} must be a string, got {}", i + 1, arg(args, i).type_name()),
        )
    })
}

fn join(args: &[Value]) -> String {
    args.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

impl Runtime {
    pub(super) fn invoke(&mut self, exec: &mut Exec, rule: &str, function: &str, args: Vec<Value>) -> R<Vec<Value>> {
        let script = match self.rules.get(rule) {
            Some(env) => env.script.clone(),
            None if self.stopped.contains(rule) => {
                return Err(RuntimeError::new("RuleNotStarted", rule, format!("rule '{rule}' is not started")))
            }
            None => return Err(RuntimeError::new("UnknownRule", rule, format!("unknown rule '{rule}'"))),
        };
        let Some(func) = script.function(function) else {
            return Err(RuntimeError::new(
                "UnknownFunction",
                rule,
                format!("rule '{rule}' has no function '{function}'"),
            ));
        };
        if exec.frames >= exec.max_frames {
            return Err(RuntimeError::new(
                "RuntimeError",
                rule,
                format!("call stack exceeds {} frames", exec.max_frames),
            ));
        }
        exec.frames += 1;
        let mut args = args.into_iter();
        let mut frame = Frame {
            rule,
            script: &script,
            locals: func
                .params
                .iter()
                .map(|p| (p.clone(), args.next().unwrap_or(Value::Nil)))
                .collect(),
        };
        let flow = self.exec_block(exec, &mut frame, &func.body);
        exec.frames -= 1;
        Ok(match flow? {
            Flow::Return(values) => values,
            Flow::Normal => Vec::new(),
        })
    }

    fn exec_block(&mut self, exec: &mut Exec, frame: &mut Frame<'_>, block: &Block) -> R<Flow> {
        let mark = frame.locals.len();
        let mut flow = Ok(Flow::Normal);
        for stmt in block {
            match self.exec_stmt(exec, frame, stmt) {
                Ok(Flow::Normal) => {}
                other => {
                    flow = other;
                    break;
                }
            }
        }
        frame.locals.truncate(mark);
        flow
    }

    fn step(&self, exec: &mut Exec, frame: &Frame<'_>) -> R<()> {
        exec.steps += 1;
        if exec.steps > exec.budget {
            return Err(err(frame, format!("execution budget of {} steps exceeded", exec.budget)));
        }
        Ok(())
    }

    fn exec_stmt(&mut self, exec: &mut Exec, frame: &mut Frame<'_>, stmt: &Stmt) -> R<Flow> {
        self.exec_stmt_inner(exec, frame, stmt).map_err(|mut e| {
            if e.line == 0 {
                e.line = stmt.line;
            }
            e
        })
    }

    fn exec_stmt_inner(&mut self, exec: &mut Exec, frame: &mut Frame<'_>, stmt: &Stmt) -> R<Flow> {
        self.step(exec, frame)?;
        match &stmt.kind {
            StmtKind::Local { names, values } => {
                let mut vals = self.eval_list(exec, frame, values)?.into_iter();
                for name in names {
                    frame.locals.push((name.clone(), vals.next().unwrap_or(Value::Nil)));
                }
            }
            StmtKind::Assign { targets, values } => {
                let mut vals = self.eval_list(exec, frame, values)?.into_iter();
                for name in targets {
                    let v = vals.next().unwrap_or(Value::Nil);
                    self.assign(frame, name, v);
                }
            }
            StmtKind::If {
                branches,
                else_block,
            } => {
                for (cond, body) in branches {
                    if self.eval(exec, frame, cond)?.truthy() {
                        return self.exec_block(exec, frame, body);
                    }
                }
                if let Some(body) = else_block {
                    return self.exec_block(exec, frame, body);
                }
            }
            StmtKind::NumericFor {
                var,
                start,
                limit,
                step,
                body,
            } => {
                let start = self.eval(exec, frame, start)?;
                let start = num(frame, &start, "for initial value")?;
                let limit = self.eval(exec, frame, limit)?;
                let limit = num(frame, &limit, "for limit")?;
                let step = match step {
                    Some(e) => {
                        let v = self.eval(exec, frame, e)?;
                        num(frame, &v, "for step")?
                    }
                    None => 1.0,
                };
                if step == 0.0 {
                    return Err(err(frame, "for step is zero"));
                }
                let mut i = start;
                while (step > 0.0 && i <= limit) || (step < 0.0 && i >= limit) {
                    self.step(exec, frame)?;
                    let mark = frame.locals.len();
                    frame.locals.push((var.clone(), Value::Number(i)));
                    let flow = self.exec_block(exec, frame, body);
                    frame.locals.truncate(mark);
                    if let Flow::Return(v) = flow? {
                        return Ok(Flow::Return(v));
                    }
                    i += step;
                }
            }
            StmtKind::While { cond, body } => {
                while self.eval(exec, frame, cond)?.truthy() {
                    self.step(exec, frame)?;
                    if let Flow::Return(v) = self.exec_block(exec, frame, body)? {
                        return Ok(Flow::Return(v));
                    }
                }
            }
            StmtKind::Call(call) => {
                self.call(exec, frame, call)?;
            }
            StmtKind::Return(values) => {
                return Ok(Flow::Return(self.eval_list(exec, frame, values)?));
            }
        }
        Ok(Flow::Normal)
    }

    fn assign(&mut self, frame: &mut Frame<'_>, name: &str, v: Value) {
        if let Some(slot) = frame.locals.iter_mut().rev().find(|(n, _)| n == name) {
            slot.1 = v;
        } else if let Some(env) = self.rules.get_mut(frame.rule) {
            if v == Value::Nil {
                env.globals.remove(name);
            } else {
                env.globals.insert(name.to_owned(), v);
            }
        }
    }

    fn lookup(&self, frame: &Frame<'_>, name: &str) -> Value {
        if let Some((_, v)) = frame.locals.iter().rev().find(|(n, _)| n == name) {
            return v.clone();
        }
        self.rules
            .get(frame.rule)
            .and_then(|env| env.globals.get(name).cloned())
            .unwrap_or(Value::Nil)
    }

    /// Evaluates an expression list; a trailing call contributes all of its
    /// return values.
    fn eval_list(&mut self, exec: &mut Exec, frame: &mut Frame<'_>, exprs: &[Expr]) -> R<Vec<Value>> {
        let mut out = Vec::with_capacity(exprs.len());
        for (i, e) in exprs.iter().enumerate() {
            match e {
                Expr::Call(call) if i + 1 == exprs.len() => out.extend(self.call(exec, frame, call)?),
                _ => out.push(self.eval(exec, frame, e)?),
            }
        }
        Ok(out)
    }

    fn eval(&mut self, exec: &mut Exec, frame: &mut Frame<'_>, expr: &Expr) -> R<Value> {
        Ok(match expr {
            Expr::Nil => Value::Nil,
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Number(n) => Value::Number(*n),
            Expr::Str(s) => Value::str(s),
            Expr::Ident(name) => self.lookup(frame, name),
            Expr::Index(base, idx) => {
                let base = self.eval(exec, frame, base)?;
                let idx = self.eval(exec, frame, idx)?;
                match base {
                    Value::List(xs) => match idx {
                        Value::Number(i) if i.fract() == 0.0 && i >= 1.0 && i <= xs.len() as f64 => {
                            xs[i as usize - 1].clone()
                        }
                        Value::Number(_) => Value::Nil,
                        other => return Err(err(frame, format!("list index must be a number, got {}", other.type_name()))),
                    },
                    other => return Err(err(frame, format!("attempt to index a {} value", other.type_name()))),
                }
            }
            Expr::Field(base, field) => match self.eval(exec, frame, base)? {
                Value::Capability(c) => match field.as_str() {
                    "value" => Value::from(&c.value),
                    "name" => Value::str(&c.name),
                    "thing" => Value::str(&c.thing),
                    "unit" => c.unit.as_deref().map(Value::str).unwrap_or(Value::Nil),
                    "writable" => Value::Bool(c.writable),
                    _ => Value::Nil,
                },
                other => {
                    return Err(err(
                        frame,
                        format!("attempt to read field '{field}' of a {} value", other.type_name()),
                    ))
                }
            },
            Expr::Unary(op, operand) => {
                let v = self.eval(exec, frame, operand)?;
                match op {
                    UnOp::Not => Value::Bool(!v.truthy()),
                    UnOp::Neg => Value::Number(-num(frame, &v, "negation")?),
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let a = self.eval(exec, frame, lhs)?;
                match op {
                    BinOp::And if !a.truthy() => return Ok(a),
                    BinOp::And => return self.eval(exec, frame, rhs),
                    BinOp::Or if a.truthy() => return Ok(a),
                    BinOp::Or => return self.eval(exec, frame, rhs),
                    _ => {}
                }
                let b = self.eval(exec, frame, rhs)?;
                binary(frame, *op, &a, &b)?
            }
            Expr::Call(call) => self.call(exec, frame, call)?.into_iter().next().unwrap_or(Value::Nil),
        })
    }

    fn call(&mut self, exec: &mut Exec, frame: &mut Frame<'_>, call: &Call) -> R<Vec<Value>> {
        let args = self.eval_list(exec, frame, &call.args)?;
        match &call.callee {
            Callee::Len => match arg(&args, 0) {
                Value::List(xs) => Ok(vec![Value::Number(xs.len() as f64)]),
                Value::Str(s) => Ok(vec![Value::Number(s.chars().count() as f64)]),
                other => Err(err(frame, format!("len expects a list or string, got {}", other.type_name()))),
            },
            Callee::Local(name) => {
                let rule = frame.rule.to_owned();
                self.invoke(exec, &rule, name, args)
            }
            Callee::Builtin(b) => self.builtin(exec, frame, *b, args),
        }
    }

    fn builtin(&mut self, exec: &mut Exec, frame: &Frame<'_>, b: Builtin, args: Vec<Value>) -> R<Vec<Value>> {
        let rule = frame.rule;
        match b {
            Builtin::Timer => {
                let target = text_arg(frame, b, &args, 0)?;
                if target != rule {
                    return Err(RuntimeError::new(
                        "BadTimerArgs",
                        rule,
                        format!("a rule can only create timers for itself, not '{target}'"),
                    ));
                }
                let function = text_arg(frame, b, &args, 1)?;
                if frame.script.function(function).is_none() {
                    return Err(RuntimeError::new(
                        "UnknownFunction",
                        rule,
                        format!("rule '{rule}' has no function '{function}'"),
                    ));
                }
                let bad = |m: &str| RuntimeError::new("BadTimerArgs", rule, m);
                let delay = arg(&args, 2).as_f64().filter(|d| d.is_finite() && *d >= 0.0);
                let delay = delay.ok_or_else(|| bad("initial delay must be a number >= 0"))?;
                let period = arg(&args, 3).as_f64().filter(|p| p.is_finite() && *p > 0.0);
                let period = period.ok_or_else(|| bad("period must be a number > 0"))?;
                let count = arg(&args, 4)
                    .as_f64()
                    .filter(|c| *c == -1.0 || (*c >= 1.0 && c.fract() == 0.0 && *c <= u32::MAX as f64));
                let count = count.ok_or_else(|| bad("count must be -1 or a positive integer"))?;
                let id = self.next_timer;
                self.next_timer += 1;
                let initial_delay = delay.ceil() as u64;
                let due = self.now() + initial_delay;
                let generation = self.rules.get(rule).map(|e| e.generation).unwrap_or(0);
                let info = TimerInfo {
                    id,
                    owner: rule.to_owned(),
                    function: function.to_owned(),
                    initial_delay,
                    period: (period.ceil() as u64).max(1),
                    count: count as i64,
                    next_due: due,
                    fires_remaining: (count > 0.0).then_some(count as u64),
                };
                self.timers.insert((due, id), TimerSpec { info, generation });
                Ok(vec![Value::Number(id as f64)])
            }
            Builtin::Query => {
                let text = text_arg(frame, b, &args, 0)?;
                let result = parse_query(text).and_then(|q| eval_query(&q, &self.registry, &self.ontology));
                Ok(match result {
                    Ok(QueryResult::Things(ids)) => {
                        vec![Value::List(Arc::new(ids.iter().map(|s| Value::str(s)).collect()))]
                    }
                    Ok(QueryResult::Number(n)) => vec![Value::Number(n)],
                    Ok(QueryResult::Count(n)) => vec![Value::Number(n as f64)],
                    Err(e) => vec![Value::Nil, Value::str(&format!("{}: {e}", e.code()))],
                })
            }
            Builtin::GetCapability => {
                let thing = text_arg(frame, b, &args, 0)?;
                let cap = text_arg(frame, b, &args, 1)?;
                Ok(match self.registry.get_capability(thing, cap) {
                    Ok(c) => vec![Value::Capability(Arc::new(CapabilityRef::new(thing, &c)))],
                    Err(e) => vec![Value::Nil, Value::str(&format!("{}: {e}", e.code()))],
                })
            }
            Builtin::SetValue => {
                let (thing, cap, value) = match arg(&args, 0) {
                    Value::Capability(c) => (c.thing.clone(), c.name.clone(), arg(&args, 1)),
                    Value::Str(t) => (t.to_string(), text_arg(frame, b, &args, 1)?.to_owned(), arg(&args, 2)),
                    other => {
                        return Err(err(
                            frame,
                            format!("{b}: expected a capability or thing id, got {}", other.type_name()),
                        ))
                    }
                };
                let scalar = value
                    .to_scalar()
                    .ok_or_else(|| RuntimeError::new("TypeMismatch", rule, format!("cannot store a {} value", value.type_name())))?;
                self.registry
                    .set_capability_value(&thing, &cap, scalar, WriteOrigin::Engine)
                    .map_err(|e| RuntimeError::new(e.code(), rule, e.to_string()))?;
                Ok(vec![Value::Bool(true)])
            }
            Builtin::GetRuleSetting => {
                let owner = text_arg(frame, b, &args, 0)?;
                let key = text_arg(frame, b, &args, 1)?;
                Ok(vec![self.setting(owner, key).map(Value::from).unwrap_or(Value::Nil)])
            }
            Builtin::Subscribe => {
                let text = text_arg(frame, b, &args, 0)?;
                let callback = text_arg(frame, b, &args, 1)?;
                if frame.script.function(callback).is_none() {
                    return Err(RuntimeError::new(
                        "UnknownFunction",
                        rule,
                        format!("rule '{rule}' has no function '{callback}'"),
                    ));
                }
                let is_query = text
                    .split_whitespace()
                    .next()
                    .is_some_and(|w| w.eq_ignore_ascii_case("subscribe"));
                let trigger = if is_query {
                    let q = parse_query(text).map_err(|e| RuntimeError::new(e.code(), rule, e.to_string()))?;
                    Trigger::Query(q.filter)
                } else {
                    let c = parse_condition(text).map_err(|e| RuntimeError::new(e.code(), rule, e.to_string()))?;
                    Trigger::Condition(c)
                };
                let handle = self.add_subscription(rule, trigger, callback);
                Ok(vec![Value::Number(handle as f64)])
            }
            Builtin::Call => {
                let target = text_arg(frame, b, &args, 0)?.to_owned();
                let function = text_arg(frame, b, &args, 1)?.to_owned();
                if exec.calls >= exec.max_calls {
                    return Err(RuntimeError::new(
                        "CallDepthExceeded",
                        rule,
                        format!("engine.call nesting exceeds {}", exec.max_calls),
                    ));
                }
                exec.calls += 1;
                let result = self.invoke(exec, &target, &function, args.into_iter().skip(2).collect());
                exec.calls -= 1;
                result
            }
            Builtin::Notify => {
                let level = arg(&args, 0).to_string();
                let message = join(args.get(1..).unwrap_or(&[]));
                let now = self.now();
                self.notifications.push(now, rule, &level, &message);
                Ok(vec![Value::Bool(true)])
            }
            Builtin::Log => {
                tracing::info!(rule, "{}", join(&args));
                Ok(Vec::new())
            }
        }
    }
}

fn binary(frame: &Frame<'_>, op: BinOp, a: &Value, b: &Value) -> R<Value> {
    use std::cmp::Ordering;
    let arith = |f: fn(f64, f64) -> f64| -> R<Value> {
        Ok(Value::Number(f(num(frame, a, op.symbol())?, num(frame, b, op.symbol())?)))
    };
    let order = || -> R<Option<Ordering>> {
        match (a, b) {
            (Value::Number(x), Value::Number(y)) => Ok(x.partial_cmp(y)),
            (Value::Str(x), Value::Str(y)) => Ok(Some(x.cmp(y))),
            _ => Err(err(
                frame,
                format!("attempt to compare {} with {}", a.type_name(), b.type_name()),
            )),
        }
    };
    match op {
        BinOp::Add => arith(|x, y| x + y),
        BinOp::Sub => arith(|x, y| x - y),
        BinOp::Mul => arith(|x, y| x * y),
        BinOp::Div | BinOp::Mod => {
            let x = num(frame, a, op.symbol())?;
            let y = num(frame, b, op.symbol())?;
            if y == 0.0 {
                return Err(err(frame, if op == BinOp::Div { "division by zero" } else { "modulo by zero" }));
            }
            Ok(Value::Number(if op == BinOp::Div { x / y } else { x - (x / y).floor() * y }))
        }
        BinOp::Eq => Ok(Value::Bool(a == b)),
        BinOp::Ne => Ok(Value::Bool(a != b)),
        BinOp::Lt => Ok(Value::Bool(order()? == Some(Ordering::Less))),
        BinOp::Le => Ok(Value::Bool(matches!(order()?, Some(Ordering::Less | Ordering::Equal)))),
        BinOp::Gt => Ok(Value::Bool(order()? == Some(Ordering::Greater))),
        BinOp::Ge => Ok(Value::Bool(matches!(order()?, Some(Ordering::Greater | Ordering::Equal)))),
        BinOp::And | BinOp::Or => unreachable!("short-circuit operators are evaluated by the caller"),
    }
}
