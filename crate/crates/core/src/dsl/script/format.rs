use std::fmt::Write;

use super::ast::*;
use crate::dsl::quote;

/// Renders a script in canonical form: two-space indentation, every nested
/// binary or unary operand parenthesised.
pub fn format_script(script: &RuleScript) -> String {
    let mut out = String::new();
    for (i, f) in script.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "function {}.{}({})",
            script.rule_name,
            f.name,
            f.params.join(", ")
        );
        block(&mut out, &f.body, 1);
        out.push_str("end\n");
    }
    out
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn block(out: &mut String, stmts: &[Stmt], level: usize) {
    for s in stmts {
        stmt(out, s, level);
    }
}

fn exprs(list: &[Expr]) -> String {
    list.iter().map(format_expr).collect::<Vec<_>>().join(", ")
}

fn stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    match &s.kind {
        StmtKind::Local { names, values } => {
            let _ = write!(out, "local {}", names.join(", "));
            if !values.is_empty() {
                let _ = write!(out, " = {}", exprs(values));
            }
            out.push('\n');
        }
        StmtKind::Assign { targets, values } => {
            let _ = writeln!(out, "{} = {}", targets.join(", "), exprs(values));
        }
        StmtKind::If {
            branches,
            else_block,
        } => {
            for (i, (cond, body)) in branches.iter().enumerate() {
                if i > 0 {
                    indent(out, level);
                    out.push_str("else");
                }
                let _ = writeln!(out, "if {} then", format_expr(cond));
                block(out, body, level + 1);
            }
            if let Some(body) = else_block {
                indent(out, level);
                out.push_str("else\n");
                block(out, body, level + 1);
            }
            indent(out, level);
            out.push_str("end\n");
        }
        StmtKind::NumericFor {
            var,
            start,
            limit,
            step,
            body,
        } => {
            let _ = write!(out, "for {var} = {}, {}", format_expr(start), format_expr(limit));
            if let Some(step) = step {
                let _ = write!(out, ", {}", format_expr(step));
            }
            out.push_str(" do\n");
            block(out, body, level + 1);
            indent(out, level);
            out.push_str("end\n");
        }
        StmtKind::While { cond, body } => {
            let _ = writeln!(out, "while {} do", format_expr(cond));
            block(out, body, level + 1);
            indent(out, level);
            out.push_str("end\n");
        }
        StmtKind::Call(call) => {
            let _ = writeln!(out, "{}", format_call(call));
        }
        StmtKind::Return(values) => {
            if values.is_empty() {
                out.push_str("return\n");
            } else {
                let _ = writeln!(out, "return {}", exprs(values));
            }
        }
    }
}

fn format_call(call: &Call) -> String {
    let name = match &call.callee {
        Callee::Builtin(b) => b.to_string(),
        Callee::Len => "len".to_owned(),
        Callee::Local(n) => n.clone(),
    };
    format!("{name}({})", exprs(&call.args))
}

fn format_number(n: f64) -> String {
    if n < 0.0 || (n == 0.0 && n.is_sign_negative()) {
        // only reachable for hand-built trees; parsed literals are non-negative
        format!("(-{})", -n)
    } else {
        format!("{n}")
    }
}

fn operand(e: &Expr) -> String {
    match e {
        Expr::Binary(..) | Expr::Unary(..) => format!("({})", format_expr(e)),
        _ => format_expr(e),
    }
}

/// Renders one expression.
pub fn format_expr(e: &Expr) -> String {
    match e {
        Expr::Nil => "nil".into(),
        Expr::Bool(b) => b.to_string(),
        Expr::Number(n) => format_number(*n),
        Expr::Str(s) => quote(s),
        Expr::Ident(name) => name.clone(),
        Expr::Index(base, idx) => format!("{}[{}]", postfix_base(base), format_expr(idx)),
        Expr::Field(base, field) => format!("{}.{field}", postfix_base(base)),
        Expr::Unary(UnOp::Not, x) => format!("not {}", operand(x)),
        Expr::Unary(UnOp::Neg, x) => format!("-{}", operand(x)),
        Expr::Binary(op, a, b) => format!("{} {} {}", operand(a), op.symbol(), operand(b)),
        Expr::Call(call) => format_call(call),
    }
}

fn postfix_base(e: &Expr) -> String {
    match e {
        Expr::Ident(_) | Expr::Call(_) | Expr::Index(..) | Expr::Field(..) => format_expr(e),
        _ => format!("({})", format_expr(e)),
    }
}
