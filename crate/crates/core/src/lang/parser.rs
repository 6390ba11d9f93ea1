use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{ParseError, SourceFile};

const KEYWORDS: &[&str] = &[
    "def", "while", "if", "elif", "else", "try", "except", "global", "pass", "and", "or", "not",
    "True", "False",
];

pub fn parse(source: &SourceFile) -> Result<Program, ParseError> {
    let tokens = tokenize(&source.text)?;
    let mut p = Parser { tokens, pos: 0 };
    let mut statements = Vec::new();
    while !p.at(&Tok::Eof) {
        if p.at(&Tok::Indent) {
            return Err(p.error("unexpected indent"));
        }
        statements.push(p.statement()?);
    }
    Ok(Program::new(statements))
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn at(&self, tok: &Tok) -> bool {
        &self.peek().tok == tok
    }

    fn at_punct(&self, p: &str) -> bool {
        matches!(&self.peek().tok, Tok::Punct(q) if *q == p)
    }

    fn at_word(&self, w: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == w)
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        let t = self.peek();
        ParseError::new(t.line, t.col, msg)
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.at_punct(p) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected `{p}`, found {}", describe(&self.peek().tok))))
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), ParseError> {
        if self.at_word(w) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected `{w}`, found {}", describe(&self.peek().tok))))
        }
    }

    fn expect_newline(&mut self) -> Result<(), ParseError> {
        if self.at(&Tok::Newline) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected end of line, found {}", describe(&self.peek().tok))))
        }
    }

    fn name(&mut self) -> Result<String, ParseError> {
        match &self.peek().tok {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            other => Err(self.error(format!("expected identifier, found {}", describe(other)))),
        }
    }

    fn dotted(&mut self) -> Result<Vec<String>, ParseError> {
        let mut path = vec![self.name()?];
        while self.at_punct(".") {
            self.bump();
            path.push(self.name()?);
        }
        Ok(path)
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let start = self.peek().clone();
        let (line, col) = (start.line, start.col);
        let word = match &start.tok {
            Tok::Ident(w) => w.as_str(),
            _ => "",
        };
        let kind = match word {
            "def" => {
                self.bump();
                let name = self.name()?;
                self.expect_punct("(")?;
                let mut params = Vec::new();
                if !self.at_punct(")") {
                    params.push(self.name()?);
                    while self.at_punct(",") {
                        self.bump();
                        params.push(self.name()?);
                    }
                }
                self.expect_punct(")")?;
                self.expect_punct(":")?;
                let body = self.suite()?;
                StmtKind::FuncDef { name, params, body }
            }
            "while" => {
                self.bump();
                let cond = self.expr()?;
                self.expect_punct(":")?;
                let body = self.suite()?;
                StmtKind::While { cond, body }
            }
            "if" => {
                self.bump();
                return self.if_rest(line, col);
            }
            "try" => {
                self.bump();
                self.expect_punct(":")?;
                let body = self.suite()?;
                self.expect_word("except")?;
                let exception = if self.at_punct(":") || self.at(&Tok::Newline) {
                    Vec::new()
                } else {
                    self.dotted()?
                };
                if self.at_punct(":") {
                    self.bump();
                }
                let handler = self.suite()?;
                StmtKind::TryExcept {
                    body,
                    exception,
                    handler,
                }
            }
            "global" => {
                self.bump();
                let mut names = vec![self.name()?];
                while self.at_punct(",") {
                    self.bump();
                    names.push(self.name()?);
                }
                self.expect_newline()?;
                StmtKind::Global(names)
            }
            "pass" => {
                self.bump();
                self.expect_newline()?;
                StmtKind::Pass
            }
            "else" | "elif" | "except" => {
                return Err(self.error(format!("`{word}` without a matching block")));
            }
            _ => {
                let kind = self.simple()?;
                self.expect_newline()?;
                kind
            }
        };
        Ok(Stmt::new(line, col, kind))
    }

    fn if_rest(&mut self, line: usize, col: usize) -> Result<Stmt, ParseError> {
        let cond = self.expr()?;
        self.expect_punct(":")?;
        let body = self.suite()?;
        let orelse = if self.at_word("else") {
            self.bump();
            self.expect_punct(":")?;
            self.suite()?
        } else if self.at_word("elif") {
            let t = self.bump();
            vec![self.if_rest(t.line, t.col)?]
        } else {
            Vec::new()
        };
        Ok(Stmt::new(line, col, StmtKind::If { cond, body, orelse }))
    }

    /// A block after `:` — either an indented run of statements or a single
    /// simple statement on the same line.
    fn suite(&mut self) -> Result<Vec<Stmt>, ParseError> {
        if self.at(&Tok::Newline) {
            self.bump();
            if !self.at(&Tok::Indent) {
                return Err(self.error("expected an indented block"));
            }
            self.bump();
            let mut body = Vec::new();
            while !self.at(&Tok::Dedent) && !self.at(&Tok::Eof) {
                body.push(self.statement()?);
            }
            if self.at(&Tok::Dedent) {
                self.bump();
            }
            Ok(body)
        } else {
            let t = self.peek().clone();
            let kind = if self.at_word("pass") {
                self.bump();
                StmtKind::Pass
            } else {
                self.simple()?
            };
            self.expect_newline()?;
            Ok(vec![Stmt::new(t.line, t.col, kind)])
        }
    }

    fn simple(&mut self) -> Result<StmtKind, ParseError> {
        let mut lhs = vec![self.expr()?];
        while self.at_punct(",") {
            self.bump();
            lhs.push(self.expr()?);
        }
        if !self.at_punct("=") {
            if lhs.len() > 1 {
                return Err(self.error("tuple expressions are not supported"));
            }
            return Ok(StmtKind::Expr(lhs.pop().unwrap()));
        }
        let eq = self.bump();
        let targets = lhs
            .into_iter()
            .map(|e| match e {
                Expr::Ident(n) => Ok(Target::Ident(n)),
                Expr::Attr(p) => Ok(Target::Attr(p)),
                _ => Err(ParseError::new(eq.line, eq.col, "cannot assign to expression")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut values = vec![self.expr()?];
        while self.at_punct(",") {
            self.bump();
            values.push(self.expr()?);
        }
        if targets.len() != values.len() {
            return Err(ParseError::new(
                eq.line,
                eq.col,
                format!("{} targets but {} values", targets.len(), values.len()),
            ));
        }
        if targets.len() == 1 {
            Ok(StmtKind::Assign {
                target: targets.into_iter().next().unwrap(),
                value: values.pop().unwrap(),
            })
        } else {
            Ok(StmtKind::MultiAssign { targets, values })
        }
    }

    pub fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.at_word("or") {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::Logical {
                op: BoolOp::Or,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.not_expr()?;
        while self.at_word("and") {
            self.bump();
            let rhs = self.not_expr()?;
            lhs = Expr::Logical {
                op: BoolOp::And,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.at_word("not") {
            self.bump();
            let operand = self.not_expr()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Not,
                operand: Box::new(operand),
            });
        }
        self.compare()
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        match &self.peek().tok {
            Tok::Punct("<") => Some(CmpOp::Lt),
            Tok::Punct(">") => Some(CmpOp::Gt),
            Tok::Punct("<=") => Some(CmpOp::Le),
            Tok::Punct(">=") => Some(CmpOp::Ge),
            Tok::Punct("==") => Some(CmpOp::Eq),
            Tok::Punct("!=") => Some(CmpOp::Ne),
            _ => None,
        }
    }

    fn compare(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.additive()?;
        let Some(op) = self.cmp_op() else {
            return Ok(lhs);
        };
        self.bump();
        let rhs = self.additive()?;
        if self.cmp_op().is_some() {
            return Err(self.error("chained comparisons are not supported"));
        }
        Ok(Expr::Compare {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        })
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match &self.peek().tok {
                Tok::Punct("+") => BinOp::Add,
                Tok::Punct("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match &self.peek().tok {
                Tok::Punct("*") => BinOp::Mul,
                Tok::Punct("/") => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.at_punct("-") {
            self.bump();
            let operand = self.unary()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Neg,
                operand: Box::new(operand),
            });
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Number(text, value) => {
                self.bump();
                Ok(Expr::Num(NumLit { text, value }))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Str(s))
            }
            Tok::Ident(ref w) if w == "True" || w == "False" => {
                self.bump();
                Ok(Expr::Bool(w == "True"))
            }
            Tok::Punct("(") => {
                self.bump();
                let inner = self.expr()?;
                self.expect_punct(")")?;
                Ok(inner)
            }
            Tok::Ident(_) => {
                let path = self.dotted()?;
                if self.at_punct("(") {
                    self.bump();
                    let (args, kwargs) = self.call_args()?;
                    return Ok(Expr::Call {
                        callee: path,
                        args,
                        kwargs,
                    });
                }
                if path.len() == 1 {
                    Ok(Expr::Ident(path.into_iter().next().unwrap()))
                } else {
                    Ok(Expr::Attr(path))
                }
            }
            other => Err(self.error(format!("expected expression, found {}", describe(&other)))),
        }
    }

    #[allow(clippy::type_complexity)]
    fn call_args(&mut self) -> Result<(Vec<Expr>, Vec<(String, Expr)>), ParseError> {
        let mut args = Vec::new();
        let mut kwargs = Vec::new();
        if self.at_punct(")") {
            self.bump();
            return Ok((args, kwargs));
        }
        loop {
            let is_kw = matches!(&self.peek().tok, Tok::Ident(_))
                && matches!(self.tokens.get(self.pos + 1).map(|t| &t.tok), Some(Tok::Punct("=")));
            if is_kw {
                let key = self.name()?;
                self.bump();
                kwargs.push((key, self.expr()?));
            } else {
                if !kwargs.is_empty() {
                    return Err(self.error("positional argument follows keyword argument"));
                }
                args.push(self.expr()?);
            }
            if self.at_punct(",") {
                self.bump();
                continue;
            }
            self.expect_punct(")")?;
            return Ok((args, kwargs));
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Number(s, _) => format!("number `{s}`"),
        Tok::Str(_) => "string".into(),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Newline => "end of line".into(),
        Tok::Indent => "indent".into(),
        Tok::Dedent => "dedent".into(),
        Tok::Eof => "end of file".into(),
    }
}
