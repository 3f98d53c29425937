use std::collections::BTreeSet;

use crate::analysis::stmt_uses;
use crate::ast::{assigned_names, AugOp, BinOp, Expr, FunctionDef, Literal, Stmt};

/// Algebraic cleanup. Every rewrite gives bitwise-identical values, except
/// `x = 0; x += e` which differs only when `e` is negative zero.
pub fn simplify(f: &FunctionDef) -> FunctionDef {
    let mut assigned: BTreeSet<String> = f.params.iter().map(|p| p.name.clone()).collect();
    let body = block(&f.body, &mut assigned);
    FunctionDef {
        body,
        ..f.clone()
    }
}

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Lit(l, _) if l.is_zero() && !matches!(l, Literal::Bool(_)))
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Lit(l, _) if l.is_one() && !matches!(l, Literal::Bool(_)))
}

fn lit_f64(e: &Expr) -> Option<f64> {
    match e {
        Expr::Lit(Literal::Float(v), _) => Some(*v),
        _ => None,
    }
}

fn fold(e: Expr) -> Expr {
    match e {
        Expr::Binary { op, lhs, rhs, span } => {
            if let (Some(a), Some(b)) = (lit_f64(&lhs), lit_f64(&rhs)) {
                let v = match op {
                    BinOp::Add => Some(a + b),
                    BinOp::Sub => Some(a - b),
                    BinOp::Mul => Some(a * b),
                    BinOp::Div if b != 0.0 => Some(a / b),
                    _ => None,
                };
                if let Some(v) = v.filter(|v| v.is_finite() && (*v > 0.0 || (*v == 0.0 && v.is_sign_positive()))) {
                    return Expr::Lit(Literal::Float(v), span);
                }
            }
            match op {
                BinOp::Mul if is_one(&rhs) && lit_kind_matches(&lhs, &rhs) => *lhs,
                BinOp::Mul if is_one(&lhs) && lit_kind_matches(&rhs, &lhs) => *rhs,
                BinOp::Div if is_one(&rhs) && lit_kind_matches(&lhs, &rhs) => *lhs,
                BinOp::Sub if is_zero(&rhs) && lit_kind_matches(&lhs, &rhs) => *lhs,
                _ => Expr::Binary { op, lhs, rhs, span },
            }
        }
        other => other,
    }
}

/// An integer literal only disappears next to something that is not a
/// float literal, so `2.0 * 1` does not silently become an int.
fn lit_kind_matches(e: &Expr, lit: &Expr) -> bool {
    !matches!(
        (e, lit),
        (Expr::Lit(Literal::Float(_), _), Expr::Lit(Literal::Int(_), _))
            | (Expr::Lit(Literal::Int(_), _), Expr::Lit(Literal::Float(_), _))
    )
}

fn simplify_expr(e: &Expr) -> Expr {
    e.clone().map(&mut fold)
}

/// `add_grad(x, e)` with `x` never bound yet evaluates to `e`.
fn drop_unbound_add_grad(e: Expr, assigned: &BTreeSet<String>) -> Expr {
    match e {
        Expr::Call {
            ref func, ref args, ..
        } if func == "add_grad" && args.len() == 2 => match &args[0] {
            Expr::Name(n, _) if !assigned.contains(n) => args[1].clone(),
            _ => e,
        },
        other => other,
    }
}

/// `x = 0` followed by an accumulation into x within the same block.
fn accumulation(s: &Stmt, x: &str) -> Option<Expr> {
    match s {
        Stmt::AugAssign {
            target,
            op: AugOp::Add,
            value,
            ..
        } if target == x => Some(value.clone()),
        Stmt::Assign { target, value, .. } if target == x => match value {
            Expr::Binary {
                op: BinOp::Add,
                lhs,
                rhs,
                ..
            } if lhs.as_name() == Some(x) => Some((**rhs).clone()),
            Expr::Call { func, args, kwargs, .. }
                if func == "add_grad" && args.len() == 2 && kwargs.is_empty() && args[0].as_name() == Some(x) =>
            {
                Some(args[1].clone())
            }
            _ => None,
        },
        _ => None,
    }
    .filter(|e| !e.reads().contains(x))
}

fn block(stmts: &[Stmt], assigned: &mut BTreeSet<String>) -> Vec<Stmt> {
    let mut out: Vec<Stmt> = Vec::with_capacity(stmts.len());
    let mut i = 0;
    'outer: while i < stmts.len() {
        let s = &stmts[i];
        if let Stmt::Assign { target, value, span } = s {
            if is_zero(value) {
                // look ahead over simple statements that do not touch target
                for j in i + 1..stmts.len() {
                    let t = &stmts[j];
                    if let Some(e) = accumulation(t, target) {
                        for m in &stmts[i + 1..j] {
                            out.push(simple(m, assigned));
                        }
                        assigned.insert(target.clone());
                        out.push(Stmt::Assign {
                            target: target.clone(),
                            value: simplify_expr(&e),
                            span: *span,
                        });
                        i = j + 1;
                        continue 'outer;
                    }
                    if t.is_compound()
                        || stmt_uses(t).contains(target)
                        || assigned_names(std::slice::from_ref(t)).contains(target)
                    {
                        break;
                    }
                }
            }
        }
        out.push(simple(s, assigned));
        i += 1;
    }
    out
}

fn simple(s: &Stmt, assigned: &mut BTreeSet<String>) -> Stmt {
    match s {
        Stmt::Assign { target, value, span } => {
            let v = drop_unbound_add_grad(simplify_expr(value), assigned);
            assigned.insert(target.clone());
            Stmt::Assign {
                target: target.clone(),
                value: v,
                span: *span,
            }
        }
        Stmt::MultiAssign { targets, value, span } => {
            assigned.extend(targets.iter().cloned());
            Stmt::MultiAssign {
                targets: targets.clone(),
                value: simplify_expr(value),
                span: *span,
            }
        }
        Stmt::AugAssign {
            target,
            op,
            value,
            span,
        } => {
            assigned.insert(target.clone());
            Stmt::AugAssign {
                target: target.clone(),
                op: *op,
                value: simplify_expr(value),
                span: *span,
            }
        }
        Stmt::IndexAssign {
            target,
            index,
            value,
            span,
        } => Stmt::IndexAssign {
            target: target.clone(),
            index: simplify_expr(index),
            value: simplify_expr(value),
            span: *span,
        },
        Stmt::If {
            cond,
            then_body,
            else_body,
            span,
        } => {
            let mut a = assigned.clone();
            let t = block(then_body, &mut a);
            let mut b = assigned.clone();
            let e = block(else_body, &mut b);
            assigned.extend(a);
            assigned.extend(b);
            Stmt::If {
                cond: simplify_expr(cond),
                then_body: t,
                else_body: e,
                span: *span,
            }
        }
        Stmt::ForRange {
            var,
            count,
            body,
            span,
        } => {
            // later iterations see everything the body assigns
            assigned.extend(assigned_names(body));
            assigned.insert(var.clone());
            Stmt::ForRange {
                var: var.clone(),
                count: simplify_expr(count),
                body: block(body, assigned),
                span: *span,
            }
        }
        Stmt::While { cond, body, span } => {
            assigned.extend(assigned_names(body));
            Stmt::While {
                cond: simplify_expr(cond),
                body: block(body, assigned),
                span: *span,
            }
        }
        Stmt::GradOf {
            param,
            alias,
            body,
            span,
        } => {
            let mut inner = assigned.clone();
            inner.insert(alias.clone());
            Stmt::GradOf {
                param: param.clone(),
                alias: alias.clone(),
                body: block(body, &mut inner),
                span: *span,
            }
        }
        Stmt::Return { value, span } => Stmt::Return {
            value: simplify_expr(value),
            span: *span,
        },
        Stmt::ExprStmt { value, span } => Stmt::ExprStmt {
            value: simplify_expr(value),
            span: *span,
        },
        Stmt::Comment(..) => s.clone(),
    }
}
