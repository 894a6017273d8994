use std::fmt;

/// A parsed rule file.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleScript {
    pub rule_name: String,
    pub functions: Vec<FuncDef>,
}

impl RuleScript {
    pub fn function(&self, name: &str) -> Option<&FuncDef> {
        self.functions.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct FuncDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Block,
    pub line: u32,
}

impl PartialEq for FuncDef {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.params == other.params && self.body == other.body
    }
}

pub type Block = Vec<Stmt>;

/// A statement and the line it starts on. Lines are diagnostics only and do
/// not take part in equality.
#[derive(Debug, Clone)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: u32,
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Self {
        Self { kind, line: 0 }
    }
}

impl PartialEq for Stmt {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Local {
        names: Vec<String>,
        values: Vec<Expr>,
    },
    Assign {
        targets: Vec<String>,
        values: Vec<Expr>,
    },
    If {
        branches: Vec<(Expr, Block)>,
        else_block: Option<Block>,
    },
    NumericFor {
        var: String,
        start: Expr,
        limit: Expr,
        step: Option<Expr>,
        body: Block,
    },
    While {
        cond: Expr,
        body: Block,
    },
    Call(Call),
    Return(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Nil,
    Bool(bool),
    Number(f64),
    Str(String),
    Ident(String),
    Index(Box<Expr>, Box<Expr>),
    Field(Box<Expr>, String),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Call),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    pub callee: Callee,
    pub args: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Callee {
    Builtin(Builtin),
    /// `len(xs)`
    Len,
    /// A function of the same rule, called as `fn(...)` or `Rule.fn(...)`.
    Local(String),
}

/// The closed set of `engine.*` functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Timer,
    Query,
    GetCapability,
    SetValue,
    GetRuleSetting,
    Subscribe,
    Call,
    Notify,
    Log,
}

impl Builtin {
    pub const ALL: [Builtin; 9] = [
        Builtin::Timer,
        Builtin::Query,
        Builtin::GetCapability,
        Builtin::SetValue,
        Builtin::GetRuleSetting,
        Builtin::Subscribe,
        Builtin::Call,
        Builtin::Notify,
        Builtin::Log,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Timer => "timer",
            Builtin::Query => "query",
            Builtin::GetCapability => "getCapability",
            Builtin::SetValue => "setValue",
            Builtin::GetRuleSetting => "getRuleSetting",
            Builtin::Subscribe => "subscribe",
            Builtin::Call => "call",
            Builtin::Notify => "notify",
            Builtin::Log => "log",
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.name() == name)
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "engine.{}", self.name())
    }
}
