use crate::ast::{BinOp, Expr, FunctionDef, Literal, Program, Stmt, UnaryOp};

const INDENT: &str = "    ";

/// Pretty-print one function in canonical form (4-space indentation, one
/// statement per line, minimal parentheses).
pub fn emit(f: &FunctionDef) -> String {
    let mut out = String::new();
    let params: Vec<String> = f
        .params
        .iter()
        .map(|p| match &p.default {
            Some(d) => format!("{}={}", p.name, expr_to_string(d)),
            None => p.name.clone(),
        })
        .collect();
    out.push_str(&format!("def {}({}):\n", f.name, params.join(", ")));
    emit_block(&f.body, 1, &mut out);
    out
}

/// Pretty-print every function, separated by a blank line.
pub fn emit_program(p: &Program) -> String {
    p.functions.iter().map(emit).collect::<Vec<_>>().join("\n")
}

/// Pretty-print a statement list at the outermost indentation level.
pub fn emit_stmts(stmts: &[Stmt]) -> String {
    let mut out = String::new();
    emit_block(stmts, 0, &mut out);
    out
}

fn emit_block(stmts: &[Stmt], depth: usize, out: &mut String) {
    for s in stmts {
        emit_stmt(s, depth, out);
    }
}

fn line(depth: usize, text: &str, out: &mut String) {
    for _ in 0..depth {
        out.push_str(INDENT);
    }
    out.push_str(text);
    out.push('\n');
}

/// One-line rendering of a statement header, used in generated comments.
pub fn stmt_summary(s: &Stmt) -> String {
    match s {
        Stmt::If { cond, .. } => format!("if {}:", expr_to_string(cond)),
        Stmt::ForRange { var, count, .. } => {
            format!("for {} in range({}):", var, expr_to_string(count))
        }
        Stmt::While { cond, .. } => format!("while {}:", expr_to_string(cond)),
        Stmt::GradOf { param, alias, .. } => format!("with grad_of({param}) as {alias}:"),
        Stmt::Comment(text, _) => format!("# {text}"),
        Stmt::Assign { target, value, .. } => format!("{} = {}", target, expr_to_string(value)),
        Stmt::MultiAssign { targets, value, .. } => {
            format!("{} = {}", targets.join(", "), expr_to_string(value))
        }
        Stmt::AugAssign {
            target, op, value, ..
        } => format!("{} {} {}", target, op.symbol(), expr_to_string(value)),
        Stmt::IndexAssign {
            target,
            index,
            value,
            ..
        } => format!(
            "{}[{}] = {}",
            target,
            index_to_string(index),
            expr_to_string(value)
        ),
        Stmt::Return { value, .. } => match value {
            Expr::Tuple(items, _) => format!(
                "return {}",
                items.iter().map(expr_to_string).collect::<Vec<_>>().join(", ")
            ),
            v => format!("return {}", expr_to_string(v)),
        },
        Stmt::ExprStmt { value, .. } => expr_to_string(value),
    }
}

fn emit_stmt(s: &Stmt, depth: usize, out: &mut String) {
    match s {
        Stmt::If {
            then_body,
            else_body,
            ..
        } => {
            line(depth, &stmt_summary(s), out);
            emit_block(then_body, depth + 1, out);
            if !else_body.is_empty() {
                line(depth, "else:", out);
                emit_block(else_body, depth + 1, out);
            }
        }
        Stmt::ForRange { body, .. } | Stmt::While { body, .. } | Stmt::GradOf { body, .. } => {
            line(depth, &stmt_summary(s), out);
            emit_block(body, depth + 1, out);
        }
        other => line(depth, &stmt_summary(other), out),
    }
}

fn index_to_string(e: &Expr) -> String {
    match e {
        Expr::Tuple(items, _) => items.iter().map(expr_to_string).collect::<Vec<_>>().join(", "),
        other => expr_to_string(other),
    }
}

pub fn literal_to_string(l: &Literal) -> String {
    match l {
        Literal::Int(v) => v.to_string(),
        Literal::Float(v) => format!("{v:?}"),
        Literal::Bool(true) => "True".into(),
        Literal::Bool(false) => "False".into(),
        Literal::None => "None".into(),
    }
}

const UNARY_NEG_PREC: u8 = 7;
const NOT_PREC: u8 = 3;
const ATOM_PREC: u8 = 9;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { op: UnaryOp::Neg, .. } => UNARY_NEG_PREC,
        Expr::Unary { op: UnaryOp::Not, .. } => NOT_PREC,
        Expr::Lit(Literal::Int(v), _) if *v < 0 => UNARY_NEG_PREC,
        Expr::Lit(Literal::Float(v), _) if v.is_sign_negative() => UNARY_NEG_PREC,
        _ => ATOM_PREC,
    }
}

fn wrap(e: &Expr, needs: bool) -> String {
    let s = expr_to_string(e);
    if needs {
        format!("({s})")
    } else {
        s
    }
}

pub fn expr_to_string(e: &Expr) -> String {
    match e {
        Expr::Name(n, _) => n.clone(),
        Expr::Lit(l, _) => literal_to_string(l),
        Expr::DerivRef(n, _) => format!("d[{n}]"),
        Expr::Binary { op, lhs, rhs, .. } => {
            let p = op.precedence();
            let non_assoc = op.is_comparison();
            let lp = prec(lhs);
            let rp = prec(rhs);
            let l = wrap(lhs, lp < p || (non_assoc && lp == p));
            let r = wrap(rhs, rp <= p);
            format!("{} {} {}", l, op.symbol(), r)
        }
        Expr::Unary { op, operand, .. } => match op {
            UnaryOp::Neg => format!("-{}", wrap(operand, prec(operand) < ATOM_PREC)),
            UnaryOp::Not => format!("not {}", wrap(operand, prec(operand) < NOT_PREC)),
        },
        Expr::Call {
            func, args, kwargs, ..
        } => {
            let mut parts: Vec<String> = args.iter().map(expr_to_string).collect();
            parts.extend(
                kwargs
                    .iter()
                    .map(|(k, v)| format!("{}={}", k, expr_to_string(v))),
            );
            format!("{}({})", func, parts.join(", "))
        }
        Expr::Index { base, index, .. } => {
            format!("{}[{}]", wrap(base, prec(base) < ATOM_PREC), index_to_string(index))
        }
        Expr::Tuple(items, _) => format!(
            "({})",
            items.iter().map(expr_to_string).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Convenience for diagnostics and tests.
pub fn binop_symbol(op: BinOp) -> &'static str {
    op.symbol()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parser::{parse_expr, parse_program};

    #[test]
    fn square_prints_canonically() {
        let p = parse_program("def f(x):\n  return x * x").unwrap();
        assert_eq!(emit(&p.functions[0]), "def f(x):\n    return x * x\n");
    }

    #[test]
    fn nested_blocks_indent_by_four() {
        let src = "def f(x, n):\n for i in range(n):\n  if x > 1:\n   x = x / 2\n return x\n";
        let p = parse_program(src).unwrap();
        let text = emit(&p.functions[0]);
        assert_eq!(
            text,
            "def f(x, n):\n    for i in range(n):\n        if x > 1:\n            x = x / 2\n    return x\n"
        );
    }

    #[test]
    fn parentheses_only_where_needed() {
        for src in [
            "a - (b - c)",
            "(a - b) - c",
            "a * (b + c)",
            "-(a * b)",
            "-a * b",
            "not (a and b)",
            "(a < b) == c",
            "f(x, axis=-1)[0]",
            "a / (b * c)",
        ] {
            let e = parse_expr(src).unwrap();
            let printed = expr_to_string(&e);
            assert_eq!(parse_expr(&printed).unwrap(), e, "{src} -> {printed}");
        }
        assert_eq!(expr_to_string(&parse_expr("(a - b) - c").unwrap()), "a - b - c");
    }

    #[test]
    fn defaults_and_floats_round_trip() {
        let src = "def d(x, by=1.0, eps=1e-6):\n    return x\n";
        let p = parse_program(src).unwrap();
        assert_eq!(emit(&p.functions[0]), src);
    }
}
