use std::collections::BTreeSet;

use crate::ast::{Expr, FunctionDef, Span, Stmt};

use super::TransformError;

/// A `grad_of` block lifted out of the primal.
#[derive(Debug, Clone)]
pub(crate) struct Injection {
    pub param: String,
    pub alias: String,
    pub body: Vec<Stmt>,
    pub span: Span,
}

/// The function as the generator sees it: augmented assignments desugared,
/// `grad_of` blocks removed, and the final statement `return <name>`.
pub(crate) struct Normalized {
    pub def: FunctionDef,
    pub result: String,
    pub injections: Vec<Injection>,
}

const GENERATED_ONLY: &[&str] = &["push", "pop", "add_grad"];

pub(crate) fn normalize(f: &FunctionDef, taken: &mut BTreeSet<String>) -> Result<Normalized, TransformError> {
    for s in &f.body {
        let mut found = None;
        s.visit(&mut |s| {
            for e in s.exprs() {
                e.visit(&mut |e| {
                    if let Expr::Call { func, span, .. } = e {
                        if GENERATED_ONLY.contains(&func.as_str()) {
                            found.get_or_insert((func.clone(), *span));
                        }
                    }
                });
            }
        });
        if let Some((func, span)) = found {
            return Err(TransformError::HigherOrder {
                function: f.name.clone(),
                detail: format!("`{func}` at {span} marks generated gradient code"),
            });
        }
    }

    let mut injections = Vec::new();
    let mut body = lift(&f.body, &mut injections);

    let last = body
        .iter()
        .rposition(|s| !s.is_comment())
        .ok_or_else(|| TransformError::Unsupported {
            message: format!("`{}` has an empty body", f.name),
            span: f.span,
        })?;
    let (value, span) = match body.remove(last) {
        Stmt::Return { value, span } => (value, span),
        other => {
            return Err(TransformError::Unsupported {
                message: "function must end with a return statement".into(),
                span: other.span(),
            })
        }
    };
    let result = match value {
        Expr::Name(n, _) => n,
        Expr::Tuple(_, span) => {
            return Err(TransformError::Unsupported {
                message: "only functions returning a single value can be differentiated".into(),
                span,
            })
        }
        other => {
            let mut y = "y".to_string();
            while taken.contains(&y) {
                y.push('_');
            }
            taken.insert(y.clone());
            body.insert(
                last,
                Stmt::Assign {
                    target: y.clone(),
                    value: other,
                    span,
                },
            );
            y
        }
    };
    body.push(Stmt::Return {
        value: Expr::Name(result.clone(), span),
        span,
    });

    Ok(Normalized {
        def: FunctionDef {
            name: f.name.clone(),
            params: f.params.clone(),
            body,
            span: f.span,
        },
        result,
        injections,
    })
}

fn lift(stmts: &[Stmt], injections: &mut Vec<Injection>) -> Vec<Stmt> {
    let mut out = Vec::with_capacity(stmts.len());
    for s in stmts {
        match s {
            Stmt::GradOf {
                param,
                alias,
                body,
                span,
            } => injections.push(Injection {
                param: param.clone(),
                alias: alias.clone(),
                body: body.clone(),
                span: *span,
            }),
            Stmt::AugAssign {
                target,
                op,
                value,
                span,
            } => out.push(Stmt::Assign {
                target: target.clone(),
                value: Expr::Binary {
                    op: op.binop(),
                    lhs: Box::new(Expr::Name(target.clone(), *span)),
                    rhs: Box::new(value.clone()),
                    span: *span,
                },
                span: *span,
            }),
            Stmt::If {
                cond,
                then_body,
                else_body,
                span,
            } => out.push(Stmt::If {
                cond: cond.clone(),
                then_body: lift(then_body, injections),
                else_body: lift(else_body, injections),
                span: *span,
            }),
            Stmt::ForRange {
                var,
                count,
                body,
                span,
            } => out.push(Stmt::ForRange {
                var: var.clone(),
                count: count.clone(),
                body: lift(body, injections),
                span: *span,
            }),
            Stmt::While { cond, body, span } => out.push(Stmt::While {
                cond: cond.clone(),
                body: lift(body, injections),
                span: *span,
            }),
            other => out.push(other.clone()),
        }
    }
    out
}

/// Rename every occurrence of a variable inside injected code.
pub(crate) fn rename_stmts(stmts: &[Stmt], from: &str, to: &str) -> Vec<Stmt> {
    let to_expr = Expr::name(to);
    let re = |e: &Expr| e.clone().substitute(from, &to_expr);
    let name = |n: &String| if n == from { to.to_string() } else { n.clone() };
    stmts
        .iter()
        .map(|s| match s {
            Stmt::Assign { target, value, span } => Stmt::Assign {
                target: name(target),
                value: re(value),
                span: *span,
            },
            Stmt::MultiAssign { targets, value, span } => Stmt::MultiAssign {
                targets: targets.iter().map(name).collect(),
                value: re(value),
                span: *span,
            },
            Stmt::AugAssign {
                target,
                op,
                value,
                span,
            } => Stmt::AugAssign {
                target: name(target),
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
                target: name(target),
                index: re(index),
                value: re(value),
                span: *span,
            },
            Stmt::If {
                cond,
                then_body,
                else_body,
                span,
            } => Stmt::If {
                cond: re(cond),
                then_body: rename_stmts(then_body, from, to),
                else_body: rename_stmts(else_body, from, to),
                span: *span,
            },
            Stmt::ForRange {
                var,
                count,
                body,
                span,
            } => Stmt::ForRange {
                var: name(var),
                count: re(count),
                body: rename_stmts(body, from, to),
                span: *span,
            },
            Stmt::While { cond, body, span } => Stmt::While {
                cond: re(cond),
                body: rename_stmts(body, from, to),
                span: *span,
            },
            Stmt::GradOf {
                param,
                alias,
                body,
                span,
            } => Stmt::GradOf {
                param: name(param),
                alias: name(alias),
                body: rename_stmts(body, from, to),
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
            Stmt::Comment(t, span) => Stmt::Comment(t.clone(), *span),
        })
        .collect()
}
