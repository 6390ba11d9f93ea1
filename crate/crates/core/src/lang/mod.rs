//! MiniBot: an indentation-structured, Python-like controller language.

pub mod ast;
mod lexer;
mod parser;
mod unparse;

pub use ast::*;
pub use unparse::{expr_text, statement_text};

use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            col,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: String,
    pub text: String,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            text: text.into(),
        }
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(path.display().to_string(), std::fs::read_to_string(path)?))
    }

    /// Text of a 1-based line, without its newline.
    pub fn line(&self, n: usize) -> Option<&str> {
        self.text.lines().nth(n.checked_sub(1)?)
    }
}

pub fn parse(source: &SourceFile) -> Result<Program, ParseError> {
    parser::parse(source)
}

pub fn parse_str(text: &str) -> Result<Program, ParseError> {
    parse(&SourceFile::new("<string>", text))
}

pub fn unparse(program: &Program) -> SourceFile {
    SourceFile::new("<unparsed>", unparse::unparse_program(program))
}

/// Identifies one numeric literal: the statement line and the literal's
/// position among that statement's literals, counted left to right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LiteralRef {
    pub line: usize,
    pub ordinal: usize,
}

/// Numeric literals in the statement's own expressions, left to right.
/// Nested blocks are not searched.
pub fn find_numeric_literals(stmt: &Stmt) -> Vec<(LiteralRef, f64)> {
    let mut out = Vec::new();
    for e in stmt.own_exprs() {
        e.walk(&mut |x| {
            if let Expr::Num(n) = x {
                let r = LiteralRef {
                    line: stmt.line,
                    ordinal: out.len(),
                };
                out.push((r, n.value));
            }
        });
    }
    out
}

/// Replaces the literal at `ordinal` in `stmt`. Returns false if there is no
/// such literal.
pub fn replace_numeric_literal(stmt: &mut Stmt, ordinal: usize, lit: NumLit) -> bool {
    let mut seen = 0;
    let mut done = false;
    let mut lit = Some(lit);
    for e in stmt.own_exprs_mut() {
        e.walk_mut(&mut |x| {
            if let Expr::Num(n) = x {
                if seen == ordinal {
                    if let Some(l) = lit.take() {
                        *n = l;
                        done = true;
                    }
                }
                seen += 1;
            }
        });
    }
    done
}

/// Names local to a function body: its parameters plus every plain name it
/// assigns without a `global` declaration. Nested definitions are skipped.
pub fn function_locals(params: &[String], body: &[Stmt]) -> BTreeSet<String> {
    let mut assigned = BTreeSet::new();
    let mut globals = BTreeSet::new();
    fn scan(block: &[Stmt], assigned: &mut BTreeSet<String>, globals: &mut BTreeSet<String>) {
        for s in block {
            match &s.kind {
                StmtKind::Assign {
                    target: Target::Ident(n),
                    ..
                } => {
                    assigned.insert(n.clone());
                }
                StmtKind::MultiAssign { targets, .. } => {
                    for t in targets {
                        if let Target::Ident(n) = t {
                            assigned.insert(n.clone());
                        }
                    }
                }
                StmtKind::Global(names) => globals.extend(names.iter().cloned()),
                StmtKind::FuncDef { .. } => continue,
                _ => {}
            }
            for b in s.blocks() {
                scan(b, assigned, globals);
            }
        }
    }
    scan(body, &mut assigned, &mut globals);
    let mut locals: BTreeSet<String> = params.iter().cloned().collect();
    locals.extend(assigned.into_iter().filter(|n| !globals.contains(n)));
    locals
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_has_no_statements() {
        let p = parse_str("").unwrap();
        assert!(p.statements.is_empty());
        assert_eq!(unparse(&p).text, "");
    }

    #[test]
    fn unbalanced_expression() {
        let err = parse_str("x = (1 +").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn canonical_assignment() {
        let p = parse_str("vel=5*delta\n").unwrap();
        assert_eq!(unparse(&p).text, "vel = 5 * delta\n");
    }

    #[test]
    fn literals_in_order() {
        let p = parse_str("v = 2 * x + 0.5\n").unwrap();
        let lits: Vec<f64> = find_numeric_literals(&p.statements[0])
            .into_iter()
            .map(|(_, v)| v)
            .collect();
        assert_eq!(lits, vec![2.0, 0.5]);
        let p = parse_str("err = abs(delta)\n").unwrap();
        assert!(find_numeric_literals(&p.statements[0]).is_empty());
    }

    #[test]
    fn literal_text_survives() {
        let src = "x = 0.50 + 1e3\n";
        let p = parse_str(src).unwrap();
        assert_eq!(unparse(&p).text, "x = 0.50 + 1e3\n");
    }

    #[test]
    fn parentheses_only_where_needed() {
        let p = parse_str("x = (a - (b - c)) * (d + e)\ny = (a * b) + c\n").unwrap();
        assert_eq!(unparse(&p).text, "x = (a - (b - c)) * (d + e)\ny = a * b + c\n");
    }

    #[test]
    fn replace_second_literal() {
        let mut p = parse_str("v = 2 * x + 0.5\n").unwrap();
        assert!(replace_numeric_literal(&mut p.statements[0], 1, NumLit::from_value(0.25)));
        assert_eq!(unparse(&p).text, "v = 2 * x + 0.25\n");
        assert!(!replace_numeric_literal(&mut p.statements[0], 2, NumLit::from_value(1.0)));
    }

    #[test]
    fn else_and_elif() {
        let src = "if a:\n    x = 1\nelif b:\n    x = 2\nelse:\n    x = 3\n";
        let p = parse_str(src).unwrap();
        let again = parse(&unparse(&p)).unwrap();
        assert!(p.same_structure(&again));
    }

    #[test]
    fn single_line_suite() {
        let p = parse_str("try:\n    x = 1\nexcept rospy.ROSInterruptException: pass\n").unwrap();
        match &p.statements[0].kind {
            StmtKind::TryExcept { exception, handler, .. } => {
                assert_eq!(exception, &["rospy", "ROSInterruptException"]);
                assert_eq!(handler[0].kind, StmtKind::Pass);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        assert!(parse_str("a, b = 1\n").is_err());
    }

    #[test]
    fn main_guard_is_entry() {
        let p = parse_str("x = 1\nif __name__ == '__main__':\n    pass\n").unwrap();
        assert_eq!(p.entry, Some(1));
        assert_eq!(statement_text(p.entry_stmt().unwrap()), "if __name__ == '__main__'");
    }
}
