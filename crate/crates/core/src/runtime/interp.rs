use std::collections::HashMap;
use std::sync::Arc;

use super::kernels;
use super::value::Value;
use super::{intrinsic_signature, ArgDefault, RuntimeError, PRINT};
use crate::ast::{AugOp, BinOp, Expr, FunctionDef, Literal, Program, Span, Stmt, UnaryOp};

type Result<T> = std::result::Result<T, RuntimeError>;

const MAX_DEPTH: usize = 200;
const MAX_WHILE_ITERATIONS: u64 = 50_000_000;

/// Hooks called during evaluation. Used by the numeric checks to look at
/// intermediate values without changing the program.
pub trait Observer {
    fn on_assign(&mut self, _function: &str, _span: Span, _name: &str, _value: &Value) {}
    /// Called for every comparison between two numbers.
    fn on_compare(&mut self, _function: &str, _span: Span, _lhs: f64, _rhs: f64) {}
    /// Checked-mode numeric warnings (division by zero, log of a
    /// non-positive number). Printed to standard error unless overridden.
    fn on_warning(&mut self, function: &str, span: Span, message: &str) {
        eprintln!("warning: {message}\n  in {function} at line {}, column {}", span.line, span.col);
    }
}

pub struct NoopObserver;

impl Observer for NoopObserver {}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Verify push/pop slot pairing and that each call leaves its stack empty.
    pub checked: bool,
}

impl EvalOptions {
    /// Checked mode is switched on by `ADJOINT_CHECKED=1`.
    pub fn from_env() -> Self {
        EvalOptions {
            checked: std::env::var("ADJOINT_CHECKED").is_ok_and(|v| v == "1"),
        }
    }
}

/// Call `name` in `program` with positional `args`. Returns the returned
/// values (several for a tuple return).
pub fn eval(
    program: &Program,
    name: &str,
    args: &[Value],
    opts: &EvalOptions,
    observer: &mut dyn Observer,
) -> Result<Vec<Value>> {
    let f = program
        .get(name)
        .ok_or_else(|| RuntimeError::new(format!("no function named `{name}`")))?;
    let mut m = Machine {
        program,
        checked: opts.checked,
        observer,
        depth: 0,
    };
    let bound: Vec<Option<Value>> = args.iter().cloned().map(Some).collect();
    m.call(f, bound)
}

struct Frame<'f> {
    function: &'f str,
    env: HashMap<String, Value>,
    stack: Vec<(i64, Option<Value>)>,
}

enum Flow {
    Next,
    Return(Vec<Value>),
}

struct Machine<'a, 'o> {
    program: &'a Program,
    checked: bool,
    observer: &'o mut dyn Observer,
    depth: usize,
}

impl<'a> Machine<'a, '_> {
    fn call(&mut self, f: &'a FunctionDef, mut args: Vec<Option<Value>>) -> Result<Vec<Value>> {
        if args.len() > f.params.len() {
            return Err(RuntimeError::new(format!(
                "`{}` takes {} arguments, {} given",
                f.name,
                f.params.len(),
                args.len()
            )));
        }
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(RuntimeError::new("maximum call depth exceeded"));
        }
        args.resize(f.params.len(), None);
        let mut frame = Frame {
            function: &f.name,
            env: HashMap::new(),
            stack: Vec::new(),
        };
        for (p, a) in f.params.iter().zip(args) {
            let v = match (a, &p.default) {
                (Some(v), _) => v,
                (None, Some(d)) => {
                    let mut empty = Frame {
                        function: &f.name,
                        env: HashMap::new(),
                        stack: Vec::new(),
                    };
                    self.expr(d, &mut empty)?
                }
                (None, None) => {
                    return Err(RuntimeError::new(format!(
                        "missing argument `{}` in call to `{}`",
                        p.name, f.name
                    )))
                }
            };
            frame.env.insert(p.name.clone(), v);
        }
        let flow = self.block(&f.body, &mut frame)?;
        self.depth -= 1;
        if self.checked && !frame.stack.is_empty() {
            return Err(RuntimeError::new(format!(
                "stack not empty on exit from `{}`: {} entries left",
                f.name,
                frame.stack.len()
            )));
        }
        match flow {
            Flow::Return(v) => Ok(v),
            Flow::Next => Ok(Vec::new()),
        }
    }

    fn block(&mut self, stmts: &'a [Stmt], fr: &mut Frame<'a>) -> Result<Flow> {
        for s in stmts {
            match self.stmt(s, fr).map_err(|e| e.at(fr.function, s.span()))? {
                Flow::Next => {}
                ret => return Ok(ret),
            }
        }
        Ok(Flow::Next)
    }

    fn bind(&mut self, fr: &mut Frame<'a>, span: Span, name: &str, v: Value) {
        self.observer.on_assign(fr.function, span, name, &v);
        fr.env.insert(name.to_string(), v);
    }

    fn stmt(&mut self, s: &'a Stmt, fr: &mut Frame<'a>) -> Result<Flow> {
        match s {
            Stmt::Assign {
                target,
                value,
                span,
            } => {
                if let Some(slot) = pop_slot(value) {
                    match self.pop(fr, slot)? {
                        Some(v) => {
                            fr.env.insert(target.clone(), v);
                        }
                        None => {
                            fr.env.remove(target);
                        }
                    }
                } else {
                    let v = self.expr(value, fr)?;
                    self.bind(fr, *span, target, v);
                }
            }
            Stmt::MultiAssign {
                targets,
                value,
                span,
            } => {
                let vals = self.multi(value, fr)?;
                if vals.len() != targets.len() {
                    return Err(RuntimeError::new(format!(
                        "cannot unpack {} values into {} names",
                        vals.len(),
                        targets.len()
                    )));
                }
                for (t, v) in targets.iter().zip(vals) {
                    self.bind(fr, *span, t, v);
                }
            }
            Stmt::AugAssign {
                target,
                op,
                value,
                span,
            } => {
                let cur = lookup(fr, target)?;
                let rhs = self.expr(value, fr)?;
                let v = match op {
                    AugOp::Add | AugOp::Sub | AugOp::Mul | AugOp::Div => {
                        kernels::arith(op.binop(), &cur, &rhs)?
                    }
                };
                self.bind(fr, *span, target, v);
            }
            Stmt::IndexAssign {
                target,
                index,
                value,
                span,
            } => {
                let idx = self.expr(index, fr)?;
                let v = match pop_slot(value) {
                    Some(slot) => self
                        .pop(fr, slot)?
                        .ok_or_else(|| RuntimeError::new("popped an unbound value into an element"))?,
                    None => self.expr(value, fr)?,
                };
                let x = v.as_f64()?;
                match fr.env.get_mut(target) {
                    Some(Value::Array(a)) => {
                        let off = kernels::element_offset(&a.shape, &idx)?;
                        Arc::make_mut(a).data[off] = x;
                        let whole = Value::Array(a.clone());
                        self.observer.on_assign(fr.function, *span, target, &whole);
                    }
                    Some(other) => {
                        return Err(RuntimeError::new(format!(
                            "cannot assign into an element of a {}",
                            other.kind()
                        )))
                    }
                    None => return Err(undefined(target)),
                }
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                let c = self.expr(cond, fr)?.truthy()?;
                return self.block(if c { then_body } else { else_body }, fr);
            }
            Stmt::ForRange {
                var,
                count,
                body,
                span,
            } => {
                let n = self.expr(count, fr)?.as_int()?;
                for i in 0..n.max(0) {
                    self.bind(fr, *span, var, Value::Int(i));
                    if let ret @ Flow::Return(_) = self.block(body, fr)? {
                        return Ok(ret);
                    }
                }
            }
            Stmt::While { cond, body, .. } => {
                let mut iters = 0u64;
                while self.expr(cond, fr)?.truthy()? {
                    iters += 1;
                    if iters > MAX_WHILE_ITERATIONS {
                        return Err(RuntimeError::new("while loop did not terminate"));
                    }
                    if let ret @ Flow::Return(_) = self.block(body, fr)? {
                        return Ok(ret);
                    }
                }
            }
            // Gradient injections only run inside generated gradients.
            Stmt::GradOf { .. } | Stmt::Comment(..) => {}
            Stmt::Return { value, .. } => return Ok(Flow::Return(self.multi(value, fr)?)),
            Stmt::ExprStmt { value, .. } => {
                self.effect(value, fr)?;
            }
        }
        Ok(Flow::Next)
    }

    fn pop(&mut self, fr: &mut Frame<'a>, slot: i64) -> Result<Option<Value>> {
        match fr.stack.pop() {
            Some((s, v)) => {
                if self.checked && s != slot {
                    return Err(RuntimeError::new(format!(
                        "stack discipline violated: expected slot {slot}, found slot {s}"
                    )));
                }
                Ok(v)
            }
            None => Err(RuntimeError::new(format!("pop from empty stack (slot {slot})"))),
        }
    }

    /// Calls made as statements: `push`, `print`, or any other call whose
    /// result is dropped.
    fn effect(&mut self, e: &'a Expr, fr: &mut Frame<'a>) -> Result<()> {
        if let Expr::Call { func, args, .. } = e {
            if func == "push" {
                if args.len() != 2 {
                    return Err(RuntimeError::new("push takes a value and a slot id"));
                }
                let slot = self.expr(&args[1], fr)?.as_int()?;
                let v = match &args[0] {
                    Expr::Name(n, _) => fr.env.get(n).cloned(),
                    other => Some(self.expr(other, fr)?),
                };
                fr.stack.push((slot, v));
                return Ok(());
            }
            if func == PRINT {
                let mut parts = Vec::with_capacity(args.len());
                for a in args {
                    parts.push(self.expr(a, fr)?.to_string());
                }
                eprintln!("{}", parts.join(" "));
                return Ok(());
            }
        }
        self.multi(e, fr)?;
        Ok(())
    }

    /// Evaluate an expression that may produce several values (a tuple
    /// literal or a call to a function returning a tuple).
    fn multi(&mut self, e: &'a Expr, fr: &mut Frame<'a>) -> Result<Vec<Value>> {
        match e {
            Expr::Tuple(items, _) => items.iter().map(|i| self.expr(i, fr)).collect(),
            Expr::Call {
                func, args, kwargs, ..
            } if self.program.get(func).is_some() => self.user_call(func, args, kwargs, fr),
            other => Ok(vec![self.expr(other, fr)?]),
        }
    }

    fn user_call(
        &mut self,
        func: &str,
        args: &'a [Expr],
        kwargs: &'a [(String, Expr)],
        fr: &mut Frame<'a>,
    ) -> Result<Vec<Value>> {
        let g = self.program.get(func).expect("checked by caller");
        let mut bound: Vec<Option<Value>> = Vec::with_capacity(g.params.len());
        for a in args {
            bound.push(Some(self.expr(a, fr)?));
        }
        bound.resize(g.params.len().max(bound.len()), None);
        for (k, a) in kwargs {
            let i = g.param_index(k).ok_or_else(|| {
                RuntimeError::new(format!("`{}` has no parameter `{k}`", g.name))
            })?;
            bound[i] = Some(self.expr(a, fr)?);
        }
        self.call(g, bound)
    }

    fn expr(&mut self, e: &'a Expr, fr: &mut Frame<'a>) -> Result<Value> {
        match e {
            Expr::Name(n, _) => lookup(fr, n),
            Expr::Lit(l, _) => Ok(match l {
                Literal::Int(v) => Value::Int(*v),
                Literal::Float(v) => Value::Scalar(*v),
                Literal::Bool(b) => Value::Bool(*b),
                Literal::None => Value::None,
            }),
            Expr::Binary { op, lhs, rhs, span } => match op {
                BinOp::And => {
                    let l = self.expr(lhs, fr)?;
                    if !l.truthy()? {
                        return Ok(Value::Bool(false));
                    }
                    Ok(Value::Bool(self.expr(rhs, fr)?.truthy()?))
                }
                BinOp::Or => {
                    let l = self.expr(lhs, fr)?;
                    if l.truthy()? {
                        return Ok(Value::Bool(true));
                    }
                    Ok(Value::Bool(self.expr(rhs, fr)?.truthy()?))
                }
                op if op.is_comparison() => {
                    let l = self.expr(lhs, fr)?;
                    let r = self.expr(rhs, fr)?;
                    // integer comparisons cannot move under a perturbation of the inputs
                    let integral = matches!((&l, &r), (Value::Int(_), Value::Int(_)));
                    if let (false, Ok(a), Ok(b)) = (integral, scalar_of(&l), scalar_of(&r)) {
                        self.observer.on_compare(fr.function, *span, a, b);
                    }
                    kernels::compare(*op, &l, &r)
                }
                op => {
                    let l = self.expr(lhs, fr)?;
                    let r = self.expr(rhs, fr)?;
                    if self.checked && *op == BinOp::Div && any_element(&r, |x| x == 0.0) {
                        self.observer.on_warning(fr.function, *span, "division by zero");
                    }
                    kernels::arith(*op, &l, &r)
                }
            },
            Expr::Unary { op, operand, .. } => {
                let v = self.expr(operand, fr)?;
                match op {
                    UnaryOp::Neg => kernels::neg(&v),
                    UnaryOp::Not => Ok(Value::Bool(!v.truthy()?)),
                }
            }
            Expr::Index { base, index, .. } => {
                let b = self.expr(base, fr)?;
                let i = self.expr(index, fr)?;
                kernels::index(&b, &i)
            }
            Expr::Tuple(items, _) => {
                let mut data = Vec::with_capacity(items.len());
                for it in items {
                    data.push(self.expr(it, fr)?.as_f64()?);
                }
                Ok(Value::vector(data))
            }
            Expr::DerivRef(n, _) => Err(RuntimeError::new(format!(
                "d[{n}] cannot be evaluated outside a template"
            ))),
            Expr::Call {
                func,
                args,
                kwargs,
                span,
            } => {
                if self.program.get(func).is_some() {
                    let mut vals = self.user_call(func, args, kwargs, fr)?;
                    if vals.len() != 1 {
                        return Err(RuntimeError::new(format!(
                            "`{func}` returned {} values where one was expected",
                            vals.len()
                        )));
                    }
                    return Ok(vals.pop().unwrap());
                }
                self.intrinsic(func, args, kwargs, *span, fr)
            }
        }
    }

    fn intrinsic(
        &mut self,
        func: &str,
        args: &'a [Expr],
        kwargs: &'a [(String, Expr)],
        span: Span,
        fr: &mut Frame<'a>,
    ) -> Result<Value> {
        if func == PRINT || func == "push" {
            return Err(RuntimeError::new(format!("`{func}` can only be used as a statement")));
        }
        if func == "pop" {
            return Err(RuntimeError::new("`pop` can only be assigned to a name or element"));
        }
        let sig = intrinsic_signature(func)
            .ok_or_else(|| RuntimeError::new(format!("unresolvable function {func}")))?;
        if args.len() > sig.len() {
            return Err(RuntimeError::new(format!(
                "`{func}` takes at most {} arguments, {} given",
                sig.len(),
                args.len()
            )));
        }
        // add_grad on a name that was never bound is just the contribution.
        if func == "add_grad" && args.len() == 2 {
            if let Expr::Name(n, _) = &args[0] {
                if !fr.env.contains_key(n) {
                    return self.expr(&args[1], fr);
                }
            }
        }
        let mut vals: Vec<Option<Value>> = Vec::with_capacity(sig.len());
        for a in args {
            vals.push(Some(self.expr(a, fr)?));
        }
        vals.resize(sig.len(), None);
        for (k, a) in kwargs {
            let i = sig.iter().position(|(n, _)| n == k).ok_or_else(|| {
                RuntimeError::new(format!("`{func}` has no parameter `{k}`"))
            })?;
            vals[i] = Some(self.expr(a, fr)?);
        }
        let mut v = Vec::with_capacity(sig.len());
        for ((name, default), val) in sig.iter().zip(vals) {
            v.push(match (val, default) {
                (Some(x), _) => x,
                (None, ArgDefault::None) => Value::None,
                (None, ArgDefault::False) => Value::Bool(false),
                (None, ArgDefault::Required) => {
                    return Err(RuntimeError::new(format!(
                        "missing argument `{name}` in call to `{func}`"
                    )))
                }
            });
        }
        if self.checked && func == "log" && any_element(&v[0], |x| x <= 0.0) {
            self.observer.on_warning(fr.function, span, "log of a non-positive number");
        }
        match func {
            "tanh" => kernels::map(&v[0], f64::tanh),
            "exp" => kernels::map(&v[0], f64::exp),
            "log" => kernels::map(&v[0], f64::ln),
            "sum" => kernels::sum(&v[0], &v[1], &v[2]),
            "mean" => kernels::mean(&v[0], &v[1], &v[2]),
            "dot" => kernels::dot(&v[0], &v[1]),
            "multiply" => kernels::arith(BinOp::Mul, &v[0], &v[1]),
            "transpose" => kernels::transpose(&v[0]),
            "unbroadcast" => kernels::unbroadcast(&v[0], &v[1]),
            "add_grad" => kernels::add_grad(&v[0], &v[1]),
            "zeros_like" => Ok(kernels::zeros_like(&v[0])),
            "unreduce" => kernels::unreduce(&v[0], &v[1], &v[2], &v[3]),
            "unreduce_mean" => kernels::unreduce_mean(&v[0], &v[1], &v[2], &v[3]),
            "unindex" => kernels::unindex(&v[0], &v[1], &v[2]),
            "grad_dot_lhs" => kernels::grad_dot_lhs(&v[0], &v[1], &v[2]),
            "grad_dot_rhs" => kernels::grad_dot_rhs(&v[0], &v[1], &v[2]),
            other => Err(RuntimeError::new(format!("unresolvable function {other}"))),
        }
    }
}

fn any_element(v: &Value, pred: impl Fn(f64) -> bool) -> bool {
    v.to_f64_vec().is_ok_and(|xs| xs.into_iter().any(pred))
}

fn scalar_of(v: &Value) -> Result<f64> {
    match v {
        Value::Scalar(_) | Value::Int(_) => v.as_f64(),
        _ => Err(RuntimeError::new("not a scalar")),
    }
}

fn pop_slot(e: &Expr) -> Option<i64> {
    match e {
        Expr::Call { func, args, .. } if func == "pop" && args.len() == 1 => match &args[0] {
            Expr::Lit(Literal::Int(s), _) => Some(*s),
            _ => None,
        },
        _ => None,
    }
}

fn lookup(fr: &Frame<'_>, n: &str) -> Result<Value> {
    fr.env.get(n).cloned().ok_or_else(|| undefined(n))
}

fn undefined(n: &str) -> RuntimeError {
    RuntimeError::new(format!("name `{n}` is not defined"))
}
