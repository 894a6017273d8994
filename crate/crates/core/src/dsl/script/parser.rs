use std::collections::BTreeSet;

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use crate::dsl::{DslError, MAX_NESTING};

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    rule_name: Option<String>,
    depth: usize,
    /// (function name, line, column) of every local call, checked once all
    /// functions are known.
    local_calls: Vec<(String, u32, u32)>,
}

type PResult<T> = Result<T, DslError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (u32, u32) {
        let t = &self.toks[self.pos];
        (t.line, t.column)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, expected: &str) -> PResult<T> {
        let (line, column) = self.here();
        Err(DslError::source(
            line,
            column,
            format!("unexpected {}", self.peek().describe()),
            Some(expected),
        ))
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn at_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Keyword(x) if *x == k)
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.at_sym(s) {
            self.bump();
            Ok(())
        } else {
            self.error(&format!("'{s}'"))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.at_kw(k) {
            self.bump();
            Ok(())
        } else {
            self.error(&format!("'{k}'"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek() {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => self.error("identifier"),
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            let (line, column) = self.here();
            return Err(DslError::source(line, column, "nesting too deep", None));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn script(&mut self) -> PResult<RuleScript> {
        let mut functions: Vec<FuncDef> = Vec::new();
        while *self.peek() != Tok::Eof {
            let f = self.function()?;
            if functions.iter().any(|g| g.name == f.name) {
                return Err(DslError::source(
                    f.line,
                    1,
                    format!("function '{}' defined twice", f.name),
                    None,
                ));
            }
            functions.push(f);
        }
        let Some(rule_name) = self.rule_name.clone() else {
            return Err(DslError::MissingInit { rule: String::new() });
        };
        let defined: BTreeSet<&str> = functions.iter().map(|f| f.name.as_str()).collect();
        if let Some((name, line, column)) = self
            .local_calls
            .iter()
            .find(|(n, _, _)| !defined.contains(n.as_str()))
        {
            return Err(DslError::source(
                *line,
                *column,
                format!("unknown function '{name}'"),
                None,
            ));
        }
        if !defined.contains("init") {
            return Err(DslError::MissingInit { rule: rule_name });
        }
        Ok(RuleScript {
            rule_name,
            functions,
        })
    }

    fn function(&mut self) -> PResult<FuncDef> {
        let (line, _) = self.here();
        self.expect_kw("function")?;
        let prefix = self.ident()?;
        match &self.rule_name {
            None => self.rule_name = Some(prefix),
            Some(name) if *name == prefix => {}
            Some(name) => {
                return Err(DslError::NameMismatch {
                    expected: name.clone(),
                    found: prefix,
                    line,
                })
            }
        }
        self.expect_sym(".")?;
        let (name_line, name_col) = self.here();
        let name = self.ident()?;
        if name == "len" {
            return Err(DslError::source(name_line, name_col, "'len' is reserved", None));
        }
        self.expect_sym("(")?;
        let mut params = Vec::new();
        if !self.at_sym(")") {
            loop {
                params.push(self.ident()?);
                if self.at_sym(",") {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        let body = self.block()?;
        self.expect_kw("end")?;
        Ok(FuncDef {
            name,
            params,
            body,
            line,
        })
    }

    fn block_ends(&self) -> bool {
        matches!(self.peek(), Tok::Eof | Tok::Keyword("end" | "elseif" | "else"))
    }

    fn block(&mut self) -> PResult<Block> {
        self.enter()?;
        let mut out = Vec::new();
        while !self.block_ends() {
            if self.at_sym(";") {
                self.bump();
                continue;
            }
            let stmt = self.statement()?;
            let is_return = matches!(stmt.kind, StmtKind::Return(_));
            out.push(stmt);
            if is_return {
                while self.at_sym(";") {
                    self.bump();
                }
                if !self.block_ends() {
                    return self.error("end of block after 'return'");
                }
            }
        }
        self.leave();
        Ok(out)
    }

    fn name_list(&mut self) -> PResult<Vec<String>> {
        let mut names = vec![self.ident()?];
        while self.at_sym(",") {
            self.bump();
            names.push(self.ident()?);
        }
        Ok(names)
    }

    fn expr_list(&mut self) -> PResult<Vec<Expr>> {
        let mut exprs = vec![self.expr()?];
        while self.at_sym(",") {
            self.bump();
            exprs.push(self.expr()?);
        }
        Ok(exprs)
    }

    fn statement(&mut self) -> PResult<Stmt> {
        let (line, column) = self.here();
        let kind = match self.peek() {
            Tok::Keyword("local") => {
                self.bump();
                let names = self.name_list()?;
                let values = if self.at_sym("=") {
                    self.bump();
                    self.expr_list()?
                } else {
                    Vec::new()
                };
                StmtKind::Local { names, values }
            }
            Tok::Keyword("if") => {
                self.bump();
                let mut branches = Vec::new();
                let cond = self.expr()?;
                self.expect_kw("then")?;
                branches.push((cond, self.block()?));
                let mut else_block = None;
                loop {
                    if self.at_kw("elseif") {
                        self.bump();
                        let cond = self.expr()?;
                        self.expect_kw("then")?;
                        branches.push((cond, self.block()?));
                    } else if self.at_kw("else") {
                        self.bump();
                        else_block = Some(self.block()?);
                        self.expect_kw("end")?;
                        break;
                    } else {
                        self.expect_kw("end")?;
                        break;
                    }
                }
                StmtKind::If {
                    branches,
                    else_block,
                }
            }
            Tok::Keyword("for") => {
                self.bump();
                let var = self.ident()?;
                self.expect_sym("=")?;
                let start = self.expr()?;
                self.expect_sym(",")?;
                let limit = self.expr()?;
                let step = if self.at_sym(",") {
                    self.bump();
                    Some(self.expr()?)
                } else {
                    None
                };
                self.expect_kw("do")?;
                let body = self.block()?;
                self.expect_kw("end")?;
                StmtKind::NumericFor {
                    var,
                    start,
                    limit,
                    step,
                    body,
                }
            }
            Tok::Keyword("while") => {
                self.bump();
                let cond = self.expr()?;
                self.expect_kw("do")?;
                let body = self.block()?;
                self.expect_kw("end")?;
                StmtKind::While { cond, body }
            }
            Tok::Keyword("return") => {
                self.bump();
                let values = if self.block_ends() || self.at_sym(";") {
                    Vec::new()
                } else {
                    self.expr_list()?
                };
                StmtKind::Return(values)
            }
            _ => {
                let first = self.suffixed()?;
                if self.at_sym("=") || self.at_sym(",") {
                    let mut targets = vec![self.assign_target(first, line, column)?];
                    while self.at_sym(",") {
                        self.bump();
                        let (l, c) = self.here();
                        let e = self.suffixed()?;
                        targets.push(self.assign_target(e, l, c)?);
                    }
                    self.expect_sym("=")?;
                    let values = self.expr_list()?;
                    StmtKind::Assign { targets, values }
                } else if let Expr::Call(call) = first {
                    StmtKind::Call(call)
                } else {
                    return Err(DslError::source(
                        line,
                        column,
                        "expression is not a statement",
                        Some("assignment or call"),
                    ));
                }
            }
        };
        Ok(Stmt { kind, line })
    }

    fn assign_target(&self, e: Expr, line: u32, column: u32) -> PResult<String> {
        match e {
            Expr::Ident(name) => Ok(name),
            _ => Err(DslError::source(line, column, "cannot assign to this expression", Some("variable name"))),
        }
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let e = self.binary(1);
        self.leave();
        e
    }

    fn binary_op(&self) -> Option<(BinOp, u8)> {
        let op = match self.peek() {
            Tok::Keyword("or") => BinOp::Or,
            Tok::Keyword("and") => BinOp::And,
            Tok::Sym("==") => BinOp::Eq,
            Tok::Sym("!=") => BinOp::Ne,
            Tok::Sym("<=") => BinOp::Le,
            Tok::Sym(">=") => BinOp::Ge,
            Tok::Sym("<") => BinOp::Lt,
            Tok::Sym(">") => BinOp::Gt,
            Tok::Sym("+") => BinOp::Add,
            Tok::Sym("-") => BinOp::Sub,
            Tok::Sym("*") => BinOp::Mul,
            Tok::Sym("/") => BinOp::Div,
            Tok::Sym("%") => BinOp::Mod,
            _ => return None,
        };
        let prec = match op {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 5,
        };
        Some((op, prec))
    }

    /// Precedence climbing; all binary operators are left-associative.
    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some((op, prec)) = self.binary_op() {
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let op = if self.at_kw("not") {
            Some(UnOp::Not)
        } else if self.at_sym("-") {
            Some(UnOp::Neg)
        } else {
            None
        };
        match op {
            Some(op) => {
                self.bump();
                self.enter()?;
                let operand = self.unary()?;
                self.leave();
                Ok(Expr::Unary(op, Box::new(operand)))
            }
            None => self.suffixed(),
        }
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect_sym("(")?;
        let args = if self.at_sym(")") {
            Vec::new()
        } else {
            self.expr_list()?
        };
        self.expect_sym(")")?;
        Ok(args)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let (line, column) = self.here();
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                Ok(Expr::Number(n))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Str(s))
            }
            Tok::Keyword("true") => {
                self.bump();
                Ok(Expr::Bool(true))
            }
            Tok::Keyword("false") => {
                self.bump();
                Ok(Expr::Bool(false))
            }
            Tok::Keyword("nil") => {
                self.bump();
                Ok(Expr::Nil)
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(name) if name == "engine" => {
                self.bump();
                self.expect_sym(".")?;
                let (l, c) = self.here();
                let fname = self.ident()?;
                let builtin = Builtin::from_name(&fname).ok_or_else(|| {
                    DslError::source(l, c, format!("unknown builtin 'engine.{fname}'"), None)
                })?;
                let args = self.args()?;
                Ok(Expr::Call(Call {
                    callee: Callee::Builtin(builtin),
                    args,
                }))
            }
            Tok::Ident(name)
                if Some(&name) == self.rule_name.as_ref()
                    && *self.peek_at(1) == Tok::Sym(".")
                    && matches!(self.peek_at(2), Tok::Ident(_))
                    && *self.peek_at(3) == Tok::Sym("(") =>
            {
                self.bump();
                self.bump();
                let (l, c) = self.here();
                let fname = self.ident()?;
                self.local_calls.push((fname.clone(), l, c));
                let args = self.args()?;
                Ok(Expr::Call(Call {
                    callee: Callee::Local(fname),
                    args,
                }))
            }
            Tok::Ident(name) if *self.peek_at(1) == Tok::Sym("(") => {
                self.bump();
                let callee = if name == "len" {
                    Callee::Len
                } else {
                    self.local_calls.push((name.clone(), line, column));
                    Callee::Local(name)
                };
                let args = self.args()?;
                Ok(Expr::Call(Call { callee, args }))
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(Expr::Ident(name))
            }
            _ => self.error("expression"),
        }
    }

    fn suffixed(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            if self.at_sym("[") {
                self.bump();
                let idx = self.expr()?;
                self.expect_sym("]")?;
                e = Expr::Index(Box::new(e), Box::new(idx));
            } else if self.at_sym(".") {
                self.bump();
                let field = self.ident()?;
                e = Expr::Field(Box::new(e), field);
            } else {
                return Ok(e);
            }
        }
    }
}

/// Parses a RuleScript source file.
///
/// The rule name is the prefix of the first function; every other function
/// must share it and an `init` function must exist.
pub fn parse_rule(source: &str) -> Result<RuleScript, DslError> {
    let toks = lex(source)?;
    let mut p = Parser {
        toks,
        pos: 0,
        rule_name: None,
        depth: 0,
        local_calls: Vec::new(),
    };
    p.script()
}
