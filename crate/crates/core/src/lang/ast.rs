//! Syntax tree for MiniBot programs.

use std::fmt;

/// A numeric literal keeps the exact text it was written with so that an
/// unparsed program reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct NumLit {
    pub text: String,
    pub value: f64,
}

impl NumLit {
    pub fn new(text: impl Into<String>, value: f64) -> Self {
        Self {
            text: text.into(),
            value,
        }
    }

    /// Builds a literal from a value, using the shortest decimal text that
    /// reads back to the same `f64`.
    pub fn from_value(value: f64) -> Self {
        Self {
            text: format!("{value}"),
            value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolOp {
    And,
    Or,
}

impl BoolOp {
    pub fn keyword(self) -> &'static str {
        match self {
            BoolOp::And => "and",
            BoolOp::Or => "or",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(NumLit),
    Bool(bool),
    Str(String),
    Ident(String),
    /// Dotted path with at least two segments, e.g. `data.pose.pose.position`.
    Attr(Vec<String>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Compare {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Logical {
        op: BoolOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Unary {
        op: UnaryOp,
        operand: Box<Expr>,
    },
    Call {
        /// Identifier or dotted path naming the callee.
        callee: Vec<String>,
        args: Vec<Expr>,
        kwargs: Vec<(String, Expr)>,
    },
}

impl Expr {
    /// Pre-order, left-to-right traversal.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Binary { lhs, rhs, .. }
            | Expr::Compare { lhs, rhs, .. }
            | Expr::Logical { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            Expr::Unary { operand, .. } => operand.walk(f),
            Expr::Call { args, kwargs, .. } => {
                for a in args {
                    a.walk(f);
                }
                for (_, v) in kwargs {
                    v.walk(f);
                }
            }
            _ => {}
        }
    }

    pub fn walk_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        f(self);
        match self {
            Expr::Binary { lhs, rhs, .. }
            | Expr::Compare { lhs, rhs, .. }
            | Expr::Logical { lhs, rhs, .. } => {
                lhs.walk_mut(f);
                rhs.walk_mut(f);
            }
            Expr::Unary { operand, .. } => operand.walk_mut(f),
            Expr::Call { args, kwargs, .. } => {
                for a in args {
                    a.walk_mut(f);
                }
                for (_, v) in kwargs {
                    v.walk_mut(f);
                }
            }
            _ => {}
        }
    }

    /// Root names of every variable read by this expression, in order of
    /// appearance. Call targets are not reads, except for the receiver of a
    /// method-style call (`vout` in `vout.publish(x)`).
    pub fn read_roots(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |e| match e {
            Expr::Ident(name) => out.push(name.clone()),
            Expr::Attr(path) => out.push(path[0].clone()),
            Expr::Call { callee, .. } if callee.len() > 1 => out.push(callee[0].clone()),
            _ => {}
        });
        out
    }

    pub fn as_call(&self) -> Option<(&[String], &[Expr])> {
        match self {
            Expr::Call { callee, args, .. } => Some((callee.as_slice(), args.as_slice())),
            _ => None,
        }
    }
}

/// Left-hand side of an assignment.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Ident(String),
    Attr(Vec<String>),
}

impl Target {
    pub fn root(&self) -> &str {
        match self {
            Target::Ident(n) => n,
            Target::Attr(p) => &p[0],
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Ident(n) => f.write_str(n),
            Target::Attr(p) => f.write_str(&p.join(".")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub line: usize,
    pub col: usize,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    FuncDef {
        name: String,
        params: Vec<String>,
        body: Vec<Stmt>,
    },
    Assign {
        target: Target,
        value: Expr,
    },
    MultiAssign {
        targets: Vec<Target>,
        values: Vec<Expr>,
    },
    Global(Vec<String>),
    While {
        cond: Expr,
        body: Vec<Stmt>,
    },
    If {
        cond: Expr,
        body: Vec<Stmt>,
        orelse: Vec<Stmt>,
    },
    TryExcept {
        body: Vec<Stmt>,
        exception: Vec<String>,
        handler: Vec<Stmt>,
    },
    Expr(Expr),
    Pass,
}

impl Stmt {
    pub fn new(line: usize, col: usize, kind: StmtKind) -> Self {
        Self { line, col, kind }
    }

    /// Nested statement blocks, in source order.
    pub fn blocks(&self) -> Vec<&[Stmt]> {
        match &self.kind {
            StmtKind::FuncDef { body, .. } | StmtKind::While { body, .. } => vec![body],
            StmtKind::If { body, orelse, .. } => vec![body, orelse],
            StmtKind::TryExcept { body, handler, .. } => vec![body, handler],
            _ => Vec::new(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut Vec<Stmt>> {
        match &mut self.kind {
            StmtKind::FuncDef { body, .. } | StmtKind::While { body, .. } => vec![body],
            StmtKind::If { body, orelse, .. } => vec![body, orelse],
            StmtKind::TryExcept { body, handler, .. } => vec![body, handler],
            _ => Vec::new(),
        }
    }

    /// Expressions owned directly by this statement (not by nested blocks).
    pub fn own_exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Assign { value, .. } => vec![value],
            StmtKind::MultiAssign { values, .. } => values.iter().collect(),
            StmtKind::While { cond, .. } | StmtKind::If { cond, .. } => vec![cond],
            StmtKind::Expr(e) => vec![e],
            _ => Vec::new(),
        }
    }

    pub fn own_exprs_mut(&mut self) -> Vec<&mut Expr> {
        match &mut self.kind {
            StmtKind::Assign { value, .. } => vec![value],
            StmtKind::MultiAssign { values, .. } => values.iter_mut().collect(),
            StmtKind::While { cond, .. } | StmtKind::If { cond, .. } => vec![cond],
            StmtKind::Expr(e) => vec![e],
            _ => Vec::new(),
        }
    }

    /// Pre-order traversal of this statement and everything nested in it.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt)) {
        f(self);
        for block in self.blocks() {
            for s in block {
                s.visit(f);
            }
        }
    }

    /// Copy with every line/column set to zero, for structural comparison.
    pub fn without_positions(&self) -> Stmt {
        let mut s = self.clone();
        s.strip_positions();
        s
    }

    fn strip_positions(&mut self) {
        self.line = 0;
        self.col = 0;
        for block in self.blocks_mut() {
            for s in block.iter_mut() {
                s.strip_positions();
            }
        }
    }

    pub fn is_compound(&self) -> bool {
        matches!(
            self.kind,
            StmtKind::FuncDef { .. }
                | StmtKind::While { .. }
                | StmtKind::If { .. }
                | StmtKind::TryExcept { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub statements: Vec<Stmt>,
    /// Index into `statements` of the `if __name__ == '__main__':` guard.
    pub entry: Option<usize>,
}

impl Program {
    pub fn new(statements: Vec<Stmt>) -> Self {
        let entry = statements.iter().position(is_main_guard);
        Self { statements, entry }
    }

    pub fn entry_stmt(&self) -> Option<&Stmt> {
        self.entry.map(|i| &self.statements[i])
    }

    /// Every statement in pre-order.
    pub fn all_statements(&self) -> Vec<&Stmt> {
        let mut out = Vec::new();
        for s in &self.statements {
            s.visit(&mut |st| out.push(st));
        }
        out
    }

    pub fn find_line(&self, line: usize) -> Option<&Stmt> {
        self.all_statements().into_iter().find(|s| s.line == line)
    }

    pub fn functions(&self) -> Vec<(&str, &[String], &[Stmt])> {
        self.all_statements()
            .into_iter()
            .filter_map(|s| match &s.kind {
                StmtKind::FuncDef { name, params, body } => {
                    Some((name.as_str(), params.as_slice(), body.as_slice()))
                }
                _ => None,
            })
            .collect()
    }

    /// Applies `f` to the statement at `line`, wherever it is nested.
    /// Returns false when no statement starts on that line.
    pub fn replace_at_line(&mut self, line: usize, f: &mut dyn FnMut(Stmt) -> Vec<Stmt>) -> bool {
        fn go(block: &mut Vec<Stmt>, line: usize, f: &mut dyn FnMut(Stmt) -> Vec<Stmt>) -> bool {
            if let Some(i) = block.iter().position(|s| s.line == line) {
                let old = block.remove(i);
                for (k, s) in f(old).into_iter().enumerate() {
                    block.insert(i + k, s);
                }
                return true;
            }
            block
                .iter_mut()
                .any(|s| s.blocks_mut().into_iter().any(|b| go(b, line, f)))
        }
        let found = go(&mut self.statements, line, f);
        self.entry = self.statements.iter().position(is_main_guard);
        found
    }

    /// Structural equality: same tree shape and content, positions ignored.
    pub fn same_structure(&self, other: &Program) -> bool {
        self.statements.len() == other.statements.len()
            && self
                .statements
                .iter()
                .zip(&other.statements)
                .all(|(a, b)| a.without_positions() == b.without_positions())
    }
}

pub fn is_main_guard(stmt: &Stmt) -> bool {
    match &stmt.kind {
        StmtKind::If { cond, .. } => matches!(
            cond,
            Expr::Compare { op: CmpOp::Eq, lhs, rhs }
                if matches!(&**lhs, Expr::Ident(n) if n == "__name__")
                    && matches!(&**rhs, Expr::Str(s) if s == "__main__")
        ),
        _ => false,
    }
}
