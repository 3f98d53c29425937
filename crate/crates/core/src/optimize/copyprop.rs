use crate::analysis::{stmt_defs, stmt_uses};
use crate::ast::{Expr, FunctionDef, Stmt};

/// Forward `_t = a` copies (generated temporaries only) into the simple
/// statements that follow in the same block. The copy itself is left for
/// dce to remove once nothing reads it.
pub fn copy_prop(f: &FunctionDef) -> FunctionDef {
    FunctionDef {
        body: block(&f.body),
        ..f.clone()
    }
}

fn is_copy(s: &Stmt) -> Option<(&str, &Expr)> {
    match s {
        Stmt::Assign { target, value, .. }
            if target.starts_with('_') && matches!(value, Expr::Name(..) | Expr::Lit(..)) =>
        {
            if value.as_name() == Some(target.as_str()) {
                None
            } else {
                Some((target, value))
            }
        }
        _ => None,
    }
}

fn block(stmts: &[Stmt]) -> Vec<Stmt> {
    let mut out: Vec<Stmt> = stmts.iter().map(recurse).collect();
    for i in 0..out.len() {
        let Some((t, v)) = is_copy(&out[i]) else { continue };
        let (t, v) = (t.to_string(), v.clone());
        let source = v.as_name().map(String::from);
        for s in out.iter_mut().skip(i + 1) {
            if s.is_compound() {
                break;
            }
            if stmt_uses(s).contains(&t) {
                *s = substitute(s, &t, &v);
            }
            let defs = stmt_defs(s);
            if defs.contains(&t) || source.as_ref().is_some_and(|s| defs.contains(s)) {
                break;
            }
        }
    }
    out
}

fn recurse(s: &Stmt) -> Stmt {
    match s {
        Stmt::If {
            cond,
            then_body,
            else_body,
            span,
        } => Stmt::If {
            cond: cond.clone(),
            then_body: block(then_body),
            else_body: block(else_body),
            span: *span,
        },
        Stmt::ForRange {
            var,
            count,
            body,
            span,
        } => Stmt::ForRange {
            var: var.clone(),
            count: count.clone(),
            body: block(body),
            span: *span,
        },
        Stmt::While { cond, body, span } => Stmt::While {
            cond: cond.clone(),
            body: block(body),
            span: *span,
        },
        Stmt::GradOf {
            param,
            alias,
            body,
            span,
        } => Stmt::GradOf {
            param: param.clone(),
            alias: alias.clone(),
            body: block(body),
            span: *span,
        },
        other => other.clone(),
    }
}

/// Replace reads of `from` in a simple statement. Targets of partial
/// updates (`a[i] = e`, `a += e`) are reads too, but cannot be renamed.
fn substitute(s: &Stmt, from: &str, to: &Expr) -> Stmt {
    let re = |e: &Expr| e.clone().substitute(from, to);
    match s {
        Stmt::Assign { target, value, span } => Stmt::Assign {
            target: target.clone(),
            value: re(value),
            span: *span,
        },
        Stmt::MultiAssign { targets, value, span } => Stmt::MultiAssign {
            targets: targets.clone(),
            value: re(value),
            span: *span,
        },
        Stmt::AugAssign {
            target,
            op,
            value,
            span,
        } => Stmt::AugAssign {
            target: target.clone(),
            op: *op,
            value: re(value),
            span: *span,
        },
        Stmt::IndexAssign {
            target,
            index,
            value,
            span,
        } => Stmt::IndexAssign {
            target: target.clone(),
            index: re(index),
            value: re(value),
            span: *span,
        },
        Stmt::Return { value, span } => Stmt::Return {
            value: re(value),
            span: *span,
        },
        Stmt::ExprStmt { value, span } => Stmt::ExprStmt {
            value: re(value),
            span: *span,
        },
        other => other.clone(),
    }
}
