use super::ast::*;

const INDENT: &str = "    ";

/// Canonical source text: four-space indentation, single spaces around
/// binary operators, minimal parentheses.
pub fn unparse_program(program: &Program) -> String {
    let mut out = String::new();
    for s in &program.statements {
        emit_stmt(s, 0, &mut out);
    }
    out
}

/// One-line rendering of a statement as it appears in reports. Compound
/// statements render as their header without the trailing colon.
pub fn statement_text(stmt: &Stmt) -> String {
    match &stmt.kind {
        StmtKind::FuncDef { name, params, .. } => format!("def {name}({})", params.join(", ")),
        StmtKind::While { cond, .. } => format!("while {}", expr_text(cond)),
        StmtKind::If { cond, .. } => format!("if {}", expr_text(cond)),
        StmtKind::TryExcept { .. } => "try".to_string(),
        StmtKind::Assign { target, value } => format!("{target} = {}", expr_text(value)),
        StmtKind::MultiAssign { targets, values } => {
            let t: Vec<String> = targets.iter().map(|t| t.to_string()).collect();
            let v: Vec<String> = values.iter().map(expr_text).collect();
            format!("{} = {}", t.join(", "), v.join(", "))
        }
        StmtKind::Global(names) => format!("global {}", names.join(", ")),
        StmtKind::Expr(e) => expr_text(e),
        StmtKind::Pass => "pass".to_string(),
    }
}

fn emit_block(block: &[Stmt], depth: usize, out: &mut String) {
    for s in block {
        emit_stmt(s, depth, out);
    }
}

fn emit_stmt(stmt: &Stmt, depth: usize, out: &mut String) {
    let pad = INDENT.repeat(depth);
    out.push_str(&pad);
    match &stmt.kind {
        StmtKind::FuncDef { body, .. } | StmtKind::While { body, .. } => {
            out.push_str(&statement_text(stmt));
            out.push_str(":\n");
            emit_block(body, depth + 1, out);
        }
        StmtKind::If { body, orelse, .. } => {
            out.push_str(&statement_text(stmt));
            out.push_str(":\n");
            emit_block(body, depth + 1, out);
            if !orelse.is_empty() {
                out.push_str(&pad);
                out.push_str("else:\n");
                emit_block(orelse, depth + 1, out);
            }
        }
        StmtKind::TryExcept {
            body,
            exception,
            handler,
        } => {
            out.push_str("try:\n");
            emit_block(body, depth + 1, out);
            out.push_str(&pad);
            if exception.is_empty() {
                out.push_str("except:\n");
            } else {
                out.push_str(&format!("except {}:\n", exception.join(".")));
            }
            emit_block(handler, depth + 1, out);
        }
        _ => {
            out.push_str(&statement_text(stmt));
            out.push('\n');
        }
    }
}

pub fn expr_text(e: &Expr) -> String {
    emit_expr(e, 0)
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Logical { op: BoolOp::Or, .. } => 1,
        Expr::Logical { op: BoolOp::And, .. } => 2,
        Expr::Unary { op: UnaryOp::Not, .. } => 3,
        Expr::Compare { .. } => 4,
        Expr::Binary {
            op: BinOp::Add | BinOp::Sub,
            ..
        } => 5,
        Expr::Binary { .. } => 6,
        Expr::Unary { op: UnaryOp::Neg, .. } => 7,
        _ => 8,
    }
}

fn emit_expr(e: &Expr, min: u8) -> String {
    let prec = precedence(e);
    let s = match e {
        Expr::Num(n) => n.text.clone(),
        Expr::Bool(b) => if *b { "True" } else { "False" }.to_string(),
        Expr::Str(s) => quote(s),
        Expr::Ident(n) => n.clone(),
        Expr::Attr(p) => p.join("."),
        Expr::Logical { op, lhs, rhs } => format!(
            "{} {} {}",
            emit_expr(lhs, prec),
            op.keyword(),
            emit_expr(rhs, prec + 1)
        ),
        Expr::Binary { op, lhs, rhs } => format!(
            "{} {} {}",
            emit_expr(lhs, prec),
            op.symbol(),
            emit_expr(rhs, prec + 1)
        ),
        Expr::Compare { op, lhs, rhs } => {
            format!("{} {} {}", emit_expr(lhs, 5), op.symbol(), emit_expr(rhs, 5))
        }
        Expr::Unary {
            op: UnaryOp::Not,
            operand,
        } => format!("not {}", emit_expr(operand, 3)),
        Expr::Unary {
            op: UnaryOp::Neg,
            operand,
        } => format!("-{}", emit_expr(operand, 7)),
        Expr::Call {
            callee,
            args,
            kwargs,
        } => {
            let mut parts: Vec<String> = args.iter().map(|a| emit_expr(a, 0)).collect();
            parts.extend(kwargs.iter().map(|(k, v)| format!("{k}={}", emit_expr(v, 0))));
            format!("{}({})", callee.join("."), parts.join(", "))
        }
    };
    if prec < min {
        format!("({s})")
    } else {
        s
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}
