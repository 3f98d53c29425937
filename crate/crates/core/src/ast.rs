//! Syntax tree for the source language.
//!
//! Spans are carried on every node for diagnostics but never take part in
//! equality: two trees compare equal when they have the same structure,
//! which is what round-trip and golden tests need.

use std::collections::BTreeSet;
use std::fmt;

/// 1-based line and column of the first character of a node.
#[derive(Debug, Clone, Copy, Default, Eq, PartialOrd, Ord)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl PartialEq for Span {
    fn eq(&self, _other: &Span) -> bool {
        true
    }
}

// consistent with equality: every span hashes alike
impl std::hash::Hash for Span {
    fn hash<H: std::hash::Hasher>(&self, _state: &mut H) {}
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
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
            BinOp::Lt => "<",
            BinOp::Gt => ">",
            BinOp::Le => "<=",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    /// Name under which the operator's adjoint template is registered.
    pub fn template_name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "subtract",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Lt => "lt",
            BinOp::Gt => "gt",
            BinOp::Le => "le",
            BinOp::Ge => "ge",
            BinOp::Eq => "eq",
            BinOp::Ne => "ne",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    /// Binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Lt | BinOp::Gt | BinOp::Le | BinOp::Ge | BinOp::Eq | BinOp::Ne => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Lt | BinOp::Gt | BinOp::Le | BinOp::Ge | BinOp::Eq | BinOp::Ne
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnaryOp {
    Neg,
    Not,
}

impl UnaryOp {
    pub fn template_name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Not => "not",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Bool(bool),
    None,
}

impl PartialEq for Literal {
    fn eq(&self, other: &Literal) -> bool {
        match (self, other) {
            (Literal::Int(a), Literal::Int(b)) => a == b,
            (Literal::Float(a), Literal::Float(b)) => a.to_bits() == b.to_bits(),
            (Literal::Bool(a), Literal::Bool(b)) => a == b,
            (Literal::None, Literal::None) => true,
            _ => false,
        }
    }
}

impl Literal {
    pub fn is_zero(&self) -> bool {
        match self {
            Literal::Int(v) => *v == 0,
            Literal::Float(v) => *v == 0.0,
            _ => false,
        }
    }

    pub fn is_one(&self) -> bool {
        match self {
            Literal::Int(v) => *v == 1,
            Literal::Float(v) => *v == 1.0,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Name(String, Span),
    Lit(Literal, Span),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        span: Span,
    },
    Unary {
        op: UnaryOp,
        operand: Box<Expr>,
        span: Span,
    },
    Call {
        func: String,
        args: Vec<Expr>,
        kwargs: Vec<(String, Expr)>,
        span: Span,
    },
    Index {
        base: Box<Expr>,
        index: Box<Expr>,
        span: Span,
    },
    Tuple(Vec<Expr>, Span),
    /// `d[name]` inside an adjoint template. Never appears in user programs
    /// or in generated code.
    DerivRef(String, Span),
}

impl Expr {
    pub fn name(name: impl Into<String>) -> Expr {
        Expr::Name(name.into(), Span::default())
    }

    pub fn float(v: f64) -> Expr {
        Expr::Lit(Literal::Float(v), Span::default())
    }

    pub fn int(v: i64) -> Expr {
        Expr::Lit(Literal::Int(v), Span::default())
    }

    pub fn call(func: impl Into<String>, args: Vec<Expr>) -> Expr {
        Expr::Call {
            func: func.into(),
            args,
            kwargs: Vec::new(),
            span: Span::default(),
        }
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            span: Span::default(),
        }
    }

    pub fn unary(op: UnaryOp, operand: Expr) -> Expr {
        Expr::Unary {
            op,
            operand: Box::new(operand),
            span: Span::default(),
        }
    }

    pub fn index(base: Expr, index: Expr) -> Expr {
        Expr::Index {
            base: Box::new(base),
            index: Box::new(index),
            span: Span::default(),
        }
    }

    pub fn span(&self) -> Span {
        match self {
            Expr::Name(_, s) | Expr::Lit(_, s) | Expr::Tuple(_, s) | Expr::DerivRef(_, s) => *s,
            Expr::Binary { span, .. }
            | Expr::Unary { span, .. }
            | Expr::Call { span, .. }
            | Expr::Index { span, .. } => *span,
        }
    }

    pub fn as_name(&self) -> Option<&str> {
        match self {
            Expr::Name(n, _) => Some(n),
            _ => None,
        }
    }

    /// Names and constants: the operands allowed in three-address form.
    /// A negated literal counts as a constant.
    pub fn is_atom(&self) -> bool {
        match self {
            Expr::Name(..) | Expr::Lit(..) => true,
            Expr::Unary {
                op: UnaryOp::Neg,
                operand,
                ..
            } => matches!(**operand, Expr::Lit(..)),
            Expr::Tuple(items, _) => items.iter().all(Expr::is_atom),
            _ => false,
        }
    }

    /// Immediate children in evaluation order.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Name(..) | Expr::Lit(..) | Expr::DerivRef(..) => Vec::new(),
            Expr::Binary { lhs, rhs, .. } => vec![lhs, rhs],
            Expr::Unary { operand, .. } => vec![operand],
            Expr::Call { args, kwargs, .. } => {
                args.iter().chain(kwargs.iter().map(|(_, e)| e)).collect()
            }
            Expr::Index { base, index, .. } => vec![base, index],
            Expr::Tuple(items, _) => items.iter().collect(),
        }
    }

    /// Every variable name read by the expression (called function names excluded).
    pub fn reads(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_reads(&mut out);
        out
    }

    pub fn collect_reads(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Name(n, _) => {
                out.insert(n.clone());
            }
            other => {
                for c in other.children() {
                    c.collect_reads(out);
                }
            }
        }
    }

    /// Pre-order visit of this expression and all sub-expressions.
    pub fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Rebuild the expression bottom-up through `f`.
    pub fn map(self, f: &mut dyn FnMut(Expr) -> Expr) -> Expr {
        let rebuilt = match self {
            Expr::Binary { op, lhs, rhs, span } => Expr::Binary {
                op,
                lhs: Box::new(lhs.map(f)),
                rhs: Box::new(rhs.map(f)),
                span,
            },
            Expr::Unary { op, operand, span } => Expr::Unary {
                op,
                operand: Box::new(operand.map(f)),
                span,
            },
            Expr::Call {
                func,
                args,
                kwargs,
                span,
            } => Expr::Call {
                func,
                args: args.into_iter().map(|a| a.map(f)).collect(),
                kwargs: kwargs.into_iter().map(|(k, v)| (k, v.map(f))).collect(),
                span,
            },
            Expr::Index { base, index, span } => Expr::Index {
                base: Box::new(base.map(f)),
                index: Box::new(index.map(f)),
                span,
            },
            Expr::Tuple(items, span) => {
                Expr::Tuple(items.into_iter().map(|e| e.map(f)).collect(), span)
            }
            leaf => leaf,
        };
        f(rebuilt)
    }

    /// Replace every read of `from` by `to`.
    pub fn substitute(self, from: &str, to: &Expr) -> Expr {
        self.map(&mut |e| match e {
            Expr::Name(ref n, _) if n == from => to.clone(),
            other => other,
        })
    }

    pub fn calls(&self, func: &str) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if let Expr::Call { func: name, .. } = e {
                if name == func {
                    found = true;
                }
            }
        });
        found
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl AugOp {
    pub fn binop(self) -> BinOp {
        match self {
            AugOp::Add => BinOp::Add,
            AugOp::Sub => BinOp::Sub,
            AugOp::Mul => BinOp::Mul,
            AugOp::Div => BinOp::Div,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            AugOp::Add => "+=",
            AugOp::Sub => "-=",
            AugOp::Mul => "*=",
            AugOp::Div => "/=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Assign {
        target: String,
        value: Expr,
        span: Span,
    },
    /// `a, b = f(...)`; only produced for calls returning several values.
    MultiAssign {
        targets: Vec<String>,
        value: Expr,
        span: Span,
    },
    AugAssign {
        target: String,
        op: AugOp,
        value: Expr,
        span: Span,
    },
    IndexAssign {
        target: String,
        index: Expr,
        value: Expr,
        span: Span,
    },
    If {
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Vec<Stmt>,
        span: Span,
    },
    ForRange {
        var: String,
        count: Expr,
        body: Vec<Stmt>,
        span: Span,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
        span: Span,
    },
    GradOf {
        param: String,
        alias: String,
        body: Vec<Stmt>,
        span: Span,
    },
    Return {
        value: Expr,
        span: Span,
    },
    /// A call evaluated for its effect (`print`, `push`).
    ExprStmt {
        value: Expr,
        span: Span,
    },
    /// A full-line `#` comment.
    Comment(String, Span),
}

impl Stmt {
    pub fn assign(target: impl Into<String>, value: Expr) -> Stmt {
        Stmt::Assign {
            target: target.into(),
            value,
            span: Span::default(),
        }
    }

    pub fn expr(value: Expr) -> Stmt {
        Stmt::ExprStmt {
            value,
            span: Span::default(),
        }
    }

    pub fn comment(text: impl Into<String>) -> Stmt {
        Stmt::Comment(text.into(), Span::default())
    }

    pub fn span(&self) -> Span {
        match self {
            Stmt::Assign { span, .. }
            | Stmt::MultiAssign { span, .. }
            | Stmt::AugAssign { span, .. }
            | Stmt::IndexAssign { span, .. }
            | Stmt::If { span, .. }
            | Stmt::ForRange { span, .. }
            | Stmt::While { span, .. }
            | Stmt::GradOf { span, .. }
            | Stmt::Return { span, .. }
            | Stmt::ExprStmt { span, .. } => *span,
            Stmt::Comment(_, span) => *span,
        }
    }

    pub fn is_comment(&self) -> bool {
        matches!(self, Stmt::Comment(..))
    }

    pub fn is_compound(&self) -> bool {
        matches!(
            self,
            Stmt::If { .. } | Stmt::ForRange { .. } | Stmt::While { .. } | Stmt::GradOf { .. }
        )
    }

    /// Nested statement lists, in source order.
    pub fn bodies(&self) -> Vec<&Vec<Stmt>> {
        match self {
            Stmt::If {
                then_body,
                else_body,
                ..
            } => vec![then_body, else_body],
            Stmt::ForRange { body, .. } | Stmt::While { body, .. } | Stmt::GradOf { body, .. } => {
                vec![body]
            }
            _ => Vec::new(),
        }
    }

    /// Expressions evaluated directly by this statement (not by nested bodies).
    pub fn exprs(&self) -> Vec<&Expr> {
        match self {
            Stmt::Assign { value, .. }
            | Stmt::MultiAssign { value, .. }
            | Stmt::AugAssign { value, .. }
            | Stmt::Return { value, .. }
            | Stmt::ExprStmt { value, .. } => vec![value],
            Stmt::IndexAssign { index, value, .. } => vec![index, value],
            Stmt::If { cond, .. } | Stmt::While { cond, .. } => vec![cond],
            Stmt::ForRange { count, .. } => vec![count],
            Stmt::GradOf { .. } | Stmt::Comment(..) => Vec::new(),
        }
    }

    /// Pre-order visit over this statement and every nested statement.
    pub fn visit(&self, f: &mut dyn FnMut(&Stmt)) {
        f(self);
        for body in self.bodies() {
            for s in body {
                s.visit(f);
            }
        }
    }
}

/// Names written anywhere inside `stmts`, including nested bodies and loop variables.
pub fn assigned_names(stmts: &[Stmt]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for s in stmts {
        s.visit(&mut |s| match s {
            Stmt::Assign { target, .. }
            | Stmt::AugAssign { target, .. }
            | Stmt::IndexAssign { target, .. } => {
                out.insert(target.clone());
            }
            Stmt::MultiAssign { targets, .. } => out.extend(targets.iter().cloned()),
            Stmt::ForRange { var, .. } => {
                out.insert(var.clone());
            }
            Stmt::GradOf { alias, .. } => {
                out.insert(alias.clone());
            }
            _ => {}
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub default: Option<Expr>,
}

impl Param {
    pub fn new(name: impl Into<String>) -> Self {
        Param {
            name: name.into(),
            default: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub span: Span,
}

impl FunctionDef {
    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Every identifier appearing in the function: parameters, assigned
    /// names, reads, and called functions.
    pub fn all_names(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.params.iter().map(|p| p.name.clone()).collect();
        out.extend(assigned_names(&self.body));
        for s in &self.body {
            s.visit(&mut |s| {
                for e in s.exprs() {
                    e.visit(&mut |e| match e {
                        Expr::Name(n, _) => {
                            out.insert(n.clone());
                        }
                        Expr::Call { func, .. } => {
                            out.insert(func.clone());
                        }
                        _ => {}
                    });
                }
                if let Stmt::GradOf { param, .. } = s {
                    out.insert(param.clone());
                }
            });
        }
        out
    }

    /// The return expression when the body ends in `return`.
    pub fn return_value(&self) -> Option<&Expr> {
        self.body.iter().rev().find(|s| !s.is_comment()).and_then(|s| match s {
            Stmt::Return { value, .. } => Some(value),
            _ => None,
        })
    }
}

/// A parsed source file: an ordered list of function definitions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Program {
    pub functions: Vec<FunctionDef>,
}

impl Program {
    pub fn new(functions: Vec<FunctionDef>) -> Self {
        Program { functions }
    }

    pub fn get(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Add or replace a function by name.
    pub fn upsert(&mut self, f: FunctionDef) {
        match self.functions.iter_mut().find(|g| g.name == f.name) {
            Some(slot) => *slot = f,
            None => self.functions.push(f),
        }
    }
}
