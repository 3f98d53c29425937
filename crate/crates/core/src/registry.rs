//! Adjoint templates: code quotes in which `d[name]` marks the derivative
//! of a template parameter. Expansion substitutes concrete names and turns
//! each `d[...]` into an adjoint variable.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::ast::{BinOp, Expr, FunctionDef, Span, Stmt};
use crate::diag::Diagnostic;
use crate::frontend::parse_templates;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("an adjoint for `{0}` is already registered")]
    Duplicate(String),
    #[error("no adjoint registered for `{0}`")]
    Unregistered(String),
    #[error("template `{template}`: parameter `{param}` is not bound")]
    Unbound { template: String, param: String },
    #[error("template `{template}` at {span}: {message}")]
    Malformed {
        template: String,
        message: String,
        span: Span,
    },
    #[error("{0}")]
    Syntax(String),
}

/// One adjoint rule. `primal_params` is (result, arg1, ..., argN); extra
/// parameters with defaults (like `axis`) come after the operands.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTemplate {
    pub target: String,
    pub primal_params: Vec<String>,
    pub defaults: Vec<Option<Expr>>,
    /// Each entry assigns the derivative slot of one parameter.
    pub body: Vec<(String, Expr)>,
    pub requires_primal_values: BTreeSet<String>,
}

impl AdjointTemplate {
    /// Build from a parsed `adjoint_<target>(result, ...)` definition.
    pub fn from_def(def: &FunctionDef) -> Result<Self, RegistryError> {
        let target = def
            .name
            .strip_prefix("adjoint_")
            .ok_or_else(|| malformed(&def.name, "template names must start with `adjoint_`", def.span))?
            .to_string();
        let params: Vec<String> = def.params.iter().map(|p| p.name.clone()).collect();
        if params.first().map(String::as_str) != Some("result") {
            return Err(malformed(&target, "the first parameter must be `result`", def.span));
        }
        let known: BTreeSet<&str> = params.iter().map(String::as_str).collect();
        let mut body = Vec::new();
        let mut reads = BTreeSet::new();
        for s in &def.body {
            match s {
                Stmt::Comment(..) => {}
                Stmt::IndexAssign {
                    target: d,
                    index: Expr::Name(slot, _),
                    value,
                    span,
                } if d == "d" => {
                    if !known.contains(slot.as_str()) {
                        return Err(malformed(&target, &format!("d[{slot}] is not a parameter"), *span));
                    }
                    let mut bad = None;
                    value.visit(&mut |e| match e {
                        Expr::DerivRef(n, sp) | Expr::Name(n, sp) if !known.contains(n.as_str()) => {
                            bad.get_or_insert((n.clone(), *sp));
                        }
                        Expr::Name(n, _) => {
                            reads.insert(n.clone());
                        }
                        _ => {}
                    });
                    if let Some((n, sp)) = bad {
                        return Err(malformed(&target, &format!("`{n}` is not a template parameter"), sp));
                    }
                    body.push((slot.clone(), value.clone()));
                }
                other => {
                    return Err(malformed(
                        &target,
                        "template bodies may only contain `d[param] = expr` statements",
                        other.span(),
                    ))
                }
            }
        }
        Ok(AdjointTemplate {
            target,
            primal_params: params,
            defaults: def.params.iter().map(|p| p.default.clone()).collect(),
            body,
            requires_primal_values: reads,
        })
    }

    /// A template whose adjoint contributes nothing (comparisons, logic).
    pub fn zero(target: &str, arity: usize) -> Self {
        let mut primal_params = vec!["result".to_string()];
        primal_params.extend((1..=arity).map(|i| format!("arg{i}")));
        AdjointTemplate {
            target: target.to_string(),
            defaults: vec![None; primal_params.len()],
            primal_params,
            body: Vec::new(),
            requires_primal_values: BTreeSet::new(),
        }
    }

    /// Parameters whose derivative slot the template assigns.
    pub fn differentiated_params(&self) -> BTreeSet<String> {
        self.body.iter().map(|(p, _)| p.clone()).collect()
    }

    /// Substitute a binding, giving each `d[...]` slot as an adjoint name.
    /// Returns (primal name, adjoint name, value) per template statement.
    pub fn instantiate(
        &self,
        binding: &Binding,
        names: &mut Mangler,
    ) -> Result<Vec<Contribution>, RegistryError> {
        let mut bound: HashMap<&str, Expr> = HashMap::new();
        for (p, default) in self.primal_params.iter().zip(&self.defaults) {
            let e = match (binding.0.get(p), default) {
                (Some(e), _) => e.clone(),
                (None, Some(d)) => d.clone(),
                (None, None) => {
                    return Err(RegistryError::Unbound {
                        template: self.target.clone(),
                        param: p.clone(),
                    })
                }
            };
            bound.insert(p.as_str(), e);
        }
        let mut out = Vec::with_capacity(self.body.len());
        for (slot, value) in &self.body {
            let primal = match &bound[slot.as_str()] {
                Expr::Name(n, _) => n.clone(),
                _ => continue, // literal operand: no adjoint to receive
            };
            let mut err = None;
            let v = value.clone().map(&mut |e| match e {
                Expr::Name(ref n, _) => bound.get(n.as_str()).cloned().unwrap_or(e),
                Expr::DerivRef(ref n, _) => match &bound[n.as_str()] {
                    Expr::Name(pn, _) => Expr::name(names.adjoint(pn)),
                    _ => {
                        err.get_or_insert(n.clone());
                        e
                    }
                },
                other => other,
            });
            if let Some(n) = err {
                return Err(RegistryError::Unbound {
                    template: self.target.clone(),
                    param: n,
                });
            }
            out.push(Contribution {
                adjoint: names.adjoint(&primal),
                primal,
                value: v,
            });
        }
        Ok(out)
    }

    /// Expand into adjoint statements. `initialized` holds adjoint names that
    /// already carry a value; assignments to them accumulate through
    /// `add_grad`. When one adjoint receives several contributions every
    /// contribution is first written to a fresh temporary.
    pub fn expand(
        &self,
        binding: &Binding,
        names: &mut Mangler,
        initialized: &BTreeSet<String>,
    ) -> Result<Vec<Stmt>, RegistryError> {
        let contribs = self.instantiate(binding, names)?;
        let result_adj = match binding.0.get("result") {
            Some(Expr::Name(n, _)) => Some(names.adjoint(n)),
            _ => None,
        };
        let mut init = initialized.clone();
        if let Some(r) = &result_adj {
            init.remove(r);
        }
        Ok(accumulate(contribs, names, &init, result_adj.as_deref()))
    }
}

/// One `d[param] = value` after substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub primal: String,
    pub adjoint: String,
    pub value: Expr,
}

/// Write contributions into their adjoints. Direct assignment is used when
/// every adjoint receives one contribution; otherwise contributions go
/// through temporaries `_b<name>`, `_b<name>2`, ... before being combined.
/// `reads_adjoint` is the result adjoint the contributions read; when it is
/// also written it must not be in `initialized`.
pub fn accumulate(
    contribs: Vec<Contribution>,
    names: &mut Mangler,
    initialized: &BTreeSet<String>,
    reads_adjoint: Option<&str>,
) -> Vec<Stmt> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &contribs {
        *counts.entry(c.adjoint.as_str()).or_default() += 1;
    }
    let needs_temps = counts.values().any(|n| *n > 1);
    let mut out = Vec::new();
    let mut init = initialized.clone();
    if !needs_temps {
        // the adjoint being read is written last so the others see its old value
        let (mut contribs, last): (Vec<_>, Vec<_>) = contribs
            .into_iter()
            .partition(|c| Some(c.adjoint.as_str()) != reads_adjoint);
        contribs.extend(last);
        for c in contribs {
            let v = if init.contains(&c.adjoint) {
                Expr::call("add_grad", vec![Expr::name(&c.adjoint), c.value])
            } else {
                c.value
            };
            init.insert(c.adjoint.clone());
            out.push(Stmt::assign(c.adjoint, v));
        }
        return out;
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut temps = Vec::new();
    for c in contribs {
        let k = seen.entry(c.primal.clone()).or_default();
        *k += 1;
        let t = names.temp(&c.primal, *k);
        out.push(Stmt::assign(&t, c.value));
        temps.push((c.adjoint, t));
    }
    for (adj, t) in temps {
        let v = if init.contains(&adj) {
            Expr::call("add_grad", vec![Expr::name(&adj), Expr::name(&t)])
        } else {
            Expr::name(&t)
        };
        init.insert(adj.clone());
        out.push(Stmt::assign(adj, v));
    }
    out
}

fn malformed(template: &str, message: &str, span: Span) -> RegistryError {
    RegistryError::Malformed {
        template: template.to_string(),
        message: message.to_string(),
        span,
    }
}

/// Template parameter → concrete expression (a variable name, or a
/// literal for keyword arguments such as `axis=-1`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Binding(pub BTreeMap<String, Expr>);

impl Binding {
    pub fn new() -> Self {
        Binding::default()
    }

    pub fn bind(mut self, param: &str, e: Expr) -> Self {
        self.0.insert(param.to_string(), e);
        self
    }

    pub fn name(self, param: &str, var: &str) -> Self {
        self.bind(param, Expr::name(var))
    }
}

/// Maps primal variables to adjoint identifiers and hands out fresh
/// contribution temporaries, never colliding with names in `taken`.
#[derive(Debug, Clone)]
pub struct Mangler {
    prefix: String,
    taken: BTreeSet<String>,
    adjoints: HashMap<String, String>,
    temps: HashMap<(String, usize), String>,
}

impl Mangler {
    pub fn new(prefix: &str, taken: BTreeSet<String>) -> Self {
        Mangler {
            prefix: prefix.to_string(),
            taken,
            adjoints: HashMap::new(),
            temps: HashMap::new(),
        }
    }

    fn fresh(&mut self, mut name: String) -> String {
        while self.taken.contains(&name) {
            name.push('_');
        }
        self.taken.insert(name.clone());
        name
    }

    /// Reserve a name so later adjoints and temporaries avoid it.
    pub fn reserve(&mut self, name: &str) {
        self.taken.insert(name.to_string());
    }

    pub fn is_taken(&self, name: &str) -> bool {
        self.taken.contains(name)
    }

    /// Fix the adjoint name of `primal` (used for the seed parameter).
    pub fn pin(&mut self, primal: &str, adjoint: &str) {
        self.taken.insert(adjoint.to_string());
        self.adjoints.insert(primal.to_string(), adjoint.to_string());
    }

    pub fn adjoint(&mut self, primal: &str) -> String {
        if let Some(a) = self.adjoints.get(primal) {
            return a.clone();
        }
        let base = match primal.strip_prefix('_') {
            Some(rest) => format!("_{}{}", self.prefix, rest),
            None => format!("{}{}", self.prefix, primal),
        };
        let a = self.fresh(base);
        self.adjoints.insert(primal.to_string(), a.clone());
        a
    }

    /// Adjoint name to primal name for every adjoint handed out so far.
    pub fn adjoint_map(&self) -> BTreeMap<String, String> {
        self.adjoints
            .iter()
            .map(|(p, a)| (a.clone(), p.clone()))
            .collect()
    }

    pub fn known_adjoint(&self, primal: &str) -> Option<&str> {
        self.adjoints.get(primal).map(String::as_str)
    }

    /// The `k`-th (1-based) contribution temporary for `primal`.
    pub fn temp(&mut self, primal: &str, k: usize) -> String {
        let key = (primal.to_string(), k);
        if let Some(t) = self.temps.get(&key) {
            return t.clone();
        }
        let adj = self.adjoint(primal);
        let base = if k == 1 { format!("_{adj}") } else { format!("_{adj}{k}") };
        let t = self.fresh(base);
        self.temps.insert(key, t.clone());
        t
    }

    /// A fresh name built from `base`.
    pub fn fresh_name(&mut self, base: &str) -> String {
        self.fresh(base.to_string())
    }
}

/// Write-once table of adjoint templates keyed by operator or intrinsic name.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    templates: HashMap<String, AdjointTemplate>,
}

impl Registry {
    pub fn empty() -> Self {
        Registry::default()
    }

    /// The built-in catalog.
    pub fn with_builtins() -> Self {
        let mut r = Registry::empty();
        for t in builtin_catalog() {
            r.register(t, false).expect("builtin catalog has no duplicates");
        }
        r
    }

    pub fn register(&mut self, t: AdjointTemplate, overwrite: bool) -> Result<(), RegistryError> {
        if !overwrite && self.templates.contains_key(&t.target) {
            return Err(RegistryError::Duplicate(t.target));
        }
        self.templates.insert(t.target.clone(), t);
        Ok(())
    }

    pub fn lookup(&self, target: &str) -> Option<&AdjointTemplate> {
        self.templates.get(target)
    }

    pub fn get(&self, target: &str) -> Result<&AdjointTemplate, RegistryError> {
        self.lookup(target)
            .ok_or_else(|| RegistryError::Unregistered(target.to_string()))
    }

    /// Load `adjoint_<name>` definitions from source text, replacing
    /// existing entries when `overwrite` is set.
    pub fn load_source(&mut self, text: &str, overwrite: bool) -> Result<Vec<String>, RegistryError> {
        let p = parse_templates(text).map_err(|d: Diagnostic| RegistryError::Syntax(d.to_string()))?;
        let mut names = Vec::new();
        for def in &p.functions {
            let t = AdjointTemplate::from_def(def)?;
            names.push(t.target.clone());
            self.register(t, overwrite)?;
        }
        Ok(names)
    }

    pub fn targets(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.templates.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

const BUILTIN_SOURCE: &str = "\
def adjoint_add(result, arg1, arg2):
    d[arg1] = unbroadcast(d[result], arg1)
    d[arg2] = unbroadcast(d[result], arg2)

def adjoint_subtract(result, arg1, arg2):
    d[arg1] = unbroadcast(d[result], arg1)
    d[arg2] = unbroadcast(-d[result], arg2)

def adjoint_mul(result, arg1, arg2):
    d[arg1] = unbroadcast(d[result] * arg2, arg1)
    d[arg2] = unbroadcast(d[result] * arg1, arg2)

def adjoint_multiply(result, arg1, arg2):
    d[arg1] = unbroadcast(d[result] * arg2, arg1)
    d[arg2] = unbroadcast(d[result] * arg1, arg2)

def adjoint_div(result, arg1, arg2):
    d[arg1] = unbroadcast(d[result] / arg2, arg1)
    d[arg2] = unbroadcast(-d[result] * arg1 / (arg2 * arg2), arg2)

def adjoint_neg(result, arg1):
    d[arg1] = -d[result]

def adjoint_tanh(result, arg1):
    d[arg1] = (1.0 - result * result) * d[result]

def adjoint_exp(result, arg1):
    d[arg1] = d[result] * result

def adjoint_log(result, arg1):
    d[arg1] = d[result] / arg1

def adjoint_sum(result, arg1, axis=None, keepdims=False):
    d[arg1] = unreduce(d[result], arg1, axis, keepdims)

def adjoint_mean(result, arg1, axis=None, keepdims=False):
    d[arg1] = unreduce_mean(d[result], arg1, axis, keepdims)

def adjoint_dot(result, arg1, arg2):
    d[arg1] = grad_dot_lhs(d[result], arg1, arg2)
    d[arg2] = grad_dot_rhs(d[result], arg1, arg2)

def adjoint_transpose(result, arg1):
    d[arg1] = transpose(d[result])

def adjoint_index(result, arg1, arg2):
    d[arg1] = unindex(d[result], arg1, arg2)
";

/// Adjoints for arithmetic, the array intrinsics, indexing, and zero
/// adjoints for comparisons and logical operators.
pub fn builtin_catalog() -> Vec<AdjointTemplate> {
    let p = parse_templates(BUILTIN_SOURCE).expect("builtin templates parse");
    let mut out: Vec<AdjointTemplate> = p
        .functions
        .iter()
        .map(|d| AdjointTemplate::from_def(d).expect("builtin template is well formed"))
        .collect();
    for op in [
        BinOp::Lt,
        BinOp::Gt,
        BinOp::Le,
        BinOp::Ge,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::And,
        BinOp::Or,
    ] {
        out.push(AdjointTemplate::zero(op.template_name(), 2));
    }
    out.push(AdjointTemplate::zero("not", 1));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Literal;
    use crate::frontend::printer::emit_stmts;

    fn show(stmts: &[Stmt]) -> String {
        emit_stmts(stmts)
    }

    fn listing_multiply() -> AdjointTemplate {
        let p = parse_templates(
            "def adjoint_multiply(result, arg1, arg2):\n    d[arg1] = arg2 * d[result]\n    d[arg2] = arg1 * d[result]\n",
        )
        .unwrap();
        AdjointTemplate::from_def(&p.functions[0]).unwrap()
    }

    #[test]
    fn multiply_expands_with_b_prefix() {
        let t = listing_multiply();
        let b = Binding::new().name("result", "var3").name("arg1", "var1").name("arg2", "var2");
        let mut m = Mangler::new("b_", BTreeSet::new());
        let out = t.expand(&b, &mut m, &BTreeSet::new()).unwrap();
        assert_eq!(show(&out), "b_var1 = var2 * b_var3\nb_var2 = var1 * b_var3\n");
        assert_eq!(t.requires_primal_values, ["arg1", "arg2"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn repeated_operand_uses_numbered_temporaries() {
        let r = Registry::with_builtins();
        let b = Binding::new().name("result", "y").name("arg1", "x").name("arg2", "x");
        let mut m = Mangler::new("b", ["x", "y"].iter().map(|s| s.to_string()).collect());
        let out = r.get("mul").unwrap().expand(&b, &mut m, &BTreeSet::new()).unwrap();
        assert_eq!(
            show(&out),
            "_bx = unbroadcast(by * x, x)\n_bx2 = unbroadcast(by * x, x)\nbx = _bx\nbx = add_grad(bx, _bx2)\n"
        );
    }

    #[test]
    fn identity_template() {
        let p = parse_templates("def adjoint_ident(result, arg1):\n    d[arg1] = d[result]\n").unwrap();
        let t = AdjointTemplate::from_def(&p.functions[0]).unwrap();
        let mut m = Mangler::new("b_", BTreeSet::new());
        let out = t
            .expand(&Binding::new().name("result", "y").name("arg1", "x"), &mut m, &BTreeSet::new())
            .unwrap();
        assert_eq!(show(&out), "b_x = b_y\n");
    }

    #[test]
    fn accumulates_into_initialized_adjoint() {
        let r = Registry::with_builtins();
        let b = Binding::new().name("result", "y").name("arg1", "x");
        let mut m = Mangler::new("b", BTreeSet::new());
        let init: BTreeSet<String> = ["bx".to_string()].into();
        let out = r.get("tanh").unwrap().expand(&b, &mut m, &init).unwrap();
        assert_eq!(show(&out), "bx = add_grad(bx, (1.0 - y * y) * by)\n");
    }

    #[test]
    fn duplicate_registration_needs_overwrite() {
        let mut r = Registry::with_builtins();
        assert_eq!(
            r.register(listing_multiply(), false),
            Err(RegistryError::Duplicate("multiply".into()))
        );
        r.register(listing_multiply(), true).unwrap();
        assert_eq!(r.get("multiply").unwrap().body[0].1, listing_multiply().body[0].1);
    }

    #[test]
    fn unbound_parameter_is_an_error() {
        let r = Registry::with_builtins();
        let mut m = Mangler::new("b", BTreeSet::new());
        let e = r
            .get("mul")
            .unwrap()
            .expand(&Binding::new().name("result", "y").name("arg1", "x"), &mut m, &BTreeSet::new())
            .unwrap_err();
        assert!(matches!(e, RegistryError::Unbound { .. }));
    }

    #[test]
    fn templates_are_hygienic() {
        let bad = parse_templates("def adjoint_f(result, arg1):\n    d[arg1] = w * d[result]\n").unwrap();
        assert!(AdjointTemplate::from_def(&bad.functions[0]).is_err());
        let bad = parse_templates("def adjoint_f(result, arg1):\n    d[z] = d[result]\n").unwrap();
        assert!(AdjointTemplate::from_def(&bad.functions[0]).is_err());
    }

    #[test]
    fn keyword_defaults_and_overrides() {
        let r = Registry::with_builtins();
        let mut m = Mangler::new("b", BTreeSet::new());
        let b = Binding::new()
            .name("result", "s")
            .name("arg1", "x")
            .bind("axis", Expr::Lit(Literal::Int(-1), Span::default()));
        let out = r.get("sum").unwrap().expand(&b, &mut m, &BTreeSet::new()).unwrap();
        assert_eq!(show(&out), "bx = unreduce(bs, x, -1, False)\n");
    }

    #[test]
    fn catalog_covers_operators_and_intrinsics() {
        let r = Registry::with_builtins();
        for t in [
            "add", "subtract", "mul", "div", "neg", "multiply", "dot", "tanh", "exp", "log", "sum",
            "mean", "index", "lt", "gt", "eq", "not",
        ] {
            assert!(r.lookup(t).is_some(), "{t}");
        }
        assert!(r.get("gt").unwrap().body.is_empty());
    }
}
