use std::collections::BTreeSet;

use crate::ast::{Expr, FunctionDef, Program, Stmt};
use crate::diag::Diagnostic;
use crate::runtime::is_intrinsic;

/// Check that `f` stays inside the differentiable subset. An empty result
/// means the function is eligible for transformation.
///
/// Rejected: names that are neither parameters, earlier locals, nor
/// functions (closures over free variables); calls that cannot be resolved
/// to a definition in `program` or an intrinsic; functions used as values or
/// rebound; `return` anywhere but the last statement; `grad_of` naming
/// something other than a parameter.
pub fn validate_subset(f: &FunctionDef, program: &Program) -> Vec<Diagnostic> {
    let mut v = Validator {
        program,
        diags: Vec::new(),
    };
    let mut defined: BTreeSet<String> = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for p in &f.params {
        if !seen.insert(p.name.clone()) {
            v.diags.push(Diagnostic::error(
                "duplicate-param",
                format!("parameter `{}` repeated", p.name),
                f.span,
            ));
        }
        if let Some(d) = &p.default {
            v.expr(d, &BTreeSet::new());
        }
        defined.insert(p.name.clone());
    }

    let code: Vec<&Stmt> = f.body.iter().filter(|s| !s.is_comment()).collect();
    match code.last() {
        Some(Stmt::Return { .. }) => {}
        _ => v.diags.push(Diagnostic::error(
            "missing-return",
            format!("function `{}` must end with a return statement", f.name),
            f.span,
        )),
    }
    let params: BTreeSet<String> = f.params.iter().map(|p| p.name.clone()).collect();
    v.block(&f.body, &mut defined, &params, true);
    v.diags
}

struct Validator<'a> {
    program: &'a Program,
    diags: Vec<Diagnostic>,
}

impl Validator<'_> {
    fn is_function(&self, name: &str) -> bool {
        self.program.get(name).is_some() || is_intrinsic(name)
    }

    fn block(
        &mut self,
        stmts: &[Stmt],
        defined: &mut BTreeSet<String>,
        params: &BTreeSet<String>,
        top: bool,
    ) {
        let last_code = stmts.iter().rposition(|s| !s.is_comment());
        for (i, s) in stmts.iter().enumerate() {
            if let Stmt::Return { span, .. } = s {
                if !top || Some(i) != last_code {
                    self.diags.push(Diagnostic::error(
                        "return-position",
                        "return is only allowed as the last statement of a function",
                        *span,
                    ));
                }
            }
            self.stmt(s, defined, params);
        }
    }

    fn define(&mut self, name: &str, span: crate::ast::Span, defined: &mut BTreeSet<String>) {
        if self.is_function(name) {
            self.diags.push(Diagnostic::error(
                "shadowed-function",
                format!("assignment to `{name}` rebinds a function name"),
                span,
            ));
        }
        defined.insert(name.to_string());
    }

    fn stmt(&mut self, s: &Stmt, defined: &mut BTreeSet<String>, params: &BTreeSet<String>) {
        match s {
            Stmt::Assign {
                target,
                value,
                span,
            } => {
                self.expr(value, defined);
                self.define(target, *span, defined);
            }
            Stmt::MultiAssign {
                targets,
                value,
                span,
            } => {
                self.expr(value, defined);
                for t in targets {
                    self.define(t, *span, defined);
                }
            }
            Stmt::AugAssign {
                target,
                value,
                span,
                ..
            } => {
                self.expr(value, defined);
                self.read(target, *span, defined);
            }
            Stmt::IndexAssign {
                target,
                index,
                value,
                span,
            } => {
                self.expr(index, defined);
                self.expr(value, defined);
                self.read(target, *span, defined);
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                self.expr(cond, defined);
                self.block(then_body, defined, params, false);
                self.block(else_body, defined, params, false);
            }
            Stmt::ForRange {
                var,
                count,
                body,
                span,
            } => {
                self.expr(count, defined);
                self.define(var, *span, defined);
                self.block(body, defined, params, false);
            }
            Stmt::While { cond, body, .. } => {
                self.expr(cond, defined);
                self.block(body, defined, params, false);
            }
            Stmt::GradOf {
                param,
                alias,
                body,
                span,
            } => {
                if !params.contains(param) {
                    self.diags.push(Diagnostic::error(
                        "grad-of-target",
                        format!("grad_of must name a function parameter, `{param}` is not one"),
                        *span,
                    ));
                }
                let mut inner = defined.clone();
                self.define(alias, *span, &mut inner);
                self.block(body, &mut inner, params, false);
            }
            Stmt::Return { value, .. } | Stmt::ExprStmt { value, .. } => self.expr(value, defined),
            Stmt::Comment(..) => {}
        }
    }

    fn read(&mut self, name: &str, span: crate::ast::Span, defined: &BTreeSet<String>) {
        if defined.contains(name) {
            return;
        }
        if self.is_function(name) {
            self.diags.push(Diagnostic::error(
                "function-as-value",
                format!("function `{name}` used as a value; functions can only be called"),
                span,
            ));
        } else {
            self.diags.push(Diagnostic::error(
                "free-variable",
                format!("free variable `{name}`: not a parameter or an earlier local"),
                span,
            ));
        }
    }

    fn expr(&mut self, e: &Expr, defined: &BTreeSet<String>) {
        match e {
            Expr::Name(n, span) => self.read(n, *span, defined),
            Expr::Call {
                func,
                args,
                kwargs,
                span,
            } => {
                if let Some(g) = self.program.get(func) {
                    self.check_user_call(g, args.len(), kwargs, *span);
                } else if !is_intrinsic(func) {
                    self.diags.push(Diagnostic::error(
                        "unresolvable-function",
                        format!("unresolvable function {func}"),
                        *span,
                    ));
                }
                for a in args {
                    self.expr(a, defined);
                }
                for (_, a) in kwargs {
                    self.expr(a, defined);
                }
            }
            Expr::DerivRef(_, span) => self.diags.push(Diagnostic::error(
                "template-syntax",
                "d[...] is only valid inside adjoint templates",
                *span,
            )),
            other => {
                for c in other.children() {
                    self.expr(c, defined);
                }
            }
        }
    }

    fn check_user_call(
        &mut self,
        g: &FunctionDef,
        positional: usize,
        kwargs: &[(String, Expr)],
        span: crate::ast::Span,
    ) {
        if positional > g.params.len() {
            self.diags.push(Diagnostic::error(
                "arity",
                format!(
                    "`{}` takes {} arguments, {} given",
                    g.name,
                    g.params.len(),
                    positional
                ),
                span,
            ));
            return;
        }
        let mut bound = vec![false; g.params.len()];
        bound[..positional].iter_mut().for_each(|b| *b = true);
        for (k, _) in kwargs {
            match g.param_index(k) {
                Some(i) if !bound[i] => bound[i] = true,
                Some(_) => self.diags.push(Diagnostic::error(
                    "arity",
                    format!("argument `{k}` of `{}` given twice", g.name),
                    span,
                )),
                None => self.diags.push(Diagnostic::error(
                    "arity",
                    format!("`{}` has no parameter `{k}`", g.name),
                    span,
                )),
            }
        }
        for (p, b) in g.params.iter().zip(bound) {
            if !b && p.default.is_none() {
                self.diags.push(Diagnostic::error(
                    "arity",
                    format!("missing argument `{}` in call to `{}`", p.name, g.name),
                    span,
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parser::parse_program;

    fn check(src: &str) -> Vec<Diagnostic> {
        let p = parse_program(src).unwrap();
        validate_subset(&p.functions[0], &p)
    }

    #[test]
    fn index_assignment_on_local_is_fine() {
        let d = check("def f(a, b):\n    c = a * 1.0\n    c[0] = b\n    return c\n");
        assert!(d.is_empty(), "{d:?}");
    }

    #[test]
    fn unknown_call_is_rejected() {
        let d = check("def f(x):\n    return g(x)\n");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "unresolvable-function");
        assert_eq!(d[0].message, "unresolvable function g");
    }

    #[test]
    fn free_variable_is_rejected() {
        let d = check("def f(x):\n    return x * w\n");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "free-variable");
        assert!(d[0].message.contains("free variable"));
        assert_eq!(d[0].span.line, 2);
    }

    #[test]
    fn early_return_rejected() {
        let d = check("def f(x):\n    if x > 0:\n        return x\n    return -x\n");
        assert!(d.iter().any(|d| d.code == "return-position"));
    }

    #[test]
    fn grad_of_must_name_parameter() {
        let d = check("def f(x):\n    y = x\n    with grad_of(y) as dy:\n        dy = 0\n    return y\n");
        assert!(d.iter().any(|d| d.code == "grad-of-target"));
    }

    #[test]
    fn functions_as_values_and_rebinding_rejected() {
        let src = "def g(x):\n    return x\ndef f(x):\n    h = g\n    tanh = x\n    return h\n";
        let p = parse_program(src).unwrap();
        let d = validate_subset(&p.functions[1], &p);
        assert!(d.iter().any(|d| d.code == "function-as-value"));
        assert!(d.iter().any(|d| d.code == "shadowed-function"));
    }

    #[test]
    fn user_call_arity() {
        let src = "def g(x, axis=None):\n    return x\ndef f(x):\n    return g(x, axis=1, k=2)\n";
        let p = parse_program(src).unwrap();
        let d = validate_subset(&p.functions[1], &p);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "arity");
    }
}
