//! Source-to-source reverse mode: from a primal function, generate one new
//! function that runs the primal (saving overwritten state on a stack) and
//! then the adjoint statements in reverse order.

mod gen;
mod reverse;
mod normalize;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

use crate::analysis::{stmt_defs, stmt_uses};
use crate::ast::{FunctionDef, Program, Span};
use crate::diag::{render, Diagnostic};
use crate::frontend::{emit, emit_program, validate_subset};
use crate::optimize::{run_pipeline, PassConfig};
use crate::registry::{Registry, RegistryError};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Truncation {
    /// Pre-order index of the loop among all loops of the function.
    pub loop_id: usize,
    /// Number of reverse iterations that propagate adjoints.
    pub keep: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GradOptions {
    /// Parameter positions to differentiate with respect to.
    pub wrt: Vec<usize>,
    /// Name of the incoming output adjoint. Defaults to the adjoint name of
    /// the returned variable (`by` for `return y`).
    pub seed_param: Option<String>,
    /// Also return the primal result, ahead of the gradients.
    pub preserve_result: bool,
    pub optimize: bool,
    pub truncations: Vec<Truncation>,
}

impl GradOptions {
    pub fn new(wrt: Vec<usize>) -> Self {
        GradOptions {
            wrt,
            seed_param: None,
            preserve_result: false,
            optimize: true,
            truncations: Vec::new(),
        }
    }

    pub fn unoptimized(mut self) -> Self {
        self.optimize = false;
        self
    }

    pub fn truncate(mut self, loop_id: usize, keep: usize) -> Self {
        self.truncations.push(Truncation { loop_id, keep });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotPurpose {
    OverwrittenValue,
    LoopTripCount,
    BranchFlag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackSlot {
    pub id: i64,
    pub purpose: SlotPurpose,
    pub variable: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GradResult {
    /// Generated source: the gradient function followed by the gradients of
    /// any user functions it calls.
    pub source: String,
    pub fn_ast: FunctionDef,
    pub support: Vec<FunctionDef>,
    pub wrt: Vec<usize>,
    pub slots: Vec<StackSlot>,
    pub warnings: Vec<Diagnostic>,
    /// Adjoint variable name to the primal variable it belongs to.
    pub adjoints: BTreeMap<String, String>,
}

impl GradResult {
    pub fn name(&self) -> &str {
        &self.fn_ast.name
    }

    /// The gradient and its support functions.
    pub fn functions(&self) -> Vec<FunctionDef> {
        let mut out = vec![self.fn_ast.clone()];
        out.extend(self.support.iter().cloned());
        out
    }

    /// `base` extended with the generated functions, ready to evaluate.
    pub fn program_with(&self, base: &Program) -> Program {
        let mut p = base.clone();
        for f in self.functions() {
            p.upsert(f);
        }
        p
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("no function named `{0}`")]
    NoFunction(String),
    #[error("invalid wrt: {0}")]
    BadWrt(String),
    #[error("`{function}` is outside the differentiable subset:\n{}", render(.diagnostics))]
    Subset {
        function: String,
        diagnostics: Vec<Diagnostic>,
    },
    #[error("{span}: {message}")]
    Unsupported { message: String, span: Span },
    #[error("{span}: no adjoint registered for `{name}`")]
    Unregistered { name: String, span: Span },
    #[error("recursive call chain {0} cannot be differentiated")]
    Recursion(String),
    #[error("`{function}` is already a generated gradient and higher-order derivatives are not supported: {detail}")]
    HigherOrder { function: String, detail: String },
    #[error("{span}: grad_of({param}) names a parameter that is not differentiated; its gradient does not exist")]
    GradOfTarget { param: String, span: Span },
    #[error("no loop with id {0}")]
    UnknownLoop(usize),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

impl TransformError {
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            TransformError::Subset { diagnostics, .. } => diagnostics.clone(),
            TransformError::Unsupported { message, span } => {
                vec![Diagnostic::error("unsupported", message.clone(), *span)]
            }
            TransformError::Unregistered { name, span } => vec![Diagnostic::error(
                "unregistered",
                format!("no adjoint registered for `{name}`"),
                *span,
            )],
            TransformError::GradOfTarget { span, .. } => {
                vec![Diagnostic::error("grad-of-target", self.to_string(), *span)]
            }
            other => vec![Diagnostic::error("transform", other.to_string(), Span::default())],
        }
    }
}

type Slot = Arc<OnceLock<Result<Arc<GradResult>, TransformError>>>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    program: u64,
    function: String,
    options: GradOptions,
}

/// Owns the adjoint registry and the memo table of generated gradients.
/// Each (program, function, options) is transformed at most once, even
/// when requested from several threads.
#[derive(Debug, Default)]
pub struct Differentiator {
    registry: Registry,
    cache: Mutex<HashMap<CacheKey, Slot>>,
    transforms: AtomicUsize,
}

impl Differentiator {
    pub fn new() -> Self {
        Differentiator::with_registry(Registry::with_builtins())
    }

    pub fn with_registry(registry: Registry) -> Self {
        Differentiator {
            registry,
            cache: Mutex::new(HashMap::new()),
            transforms: AtomicUsize::new(0),
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Number of gradient functions actually generated (cache misses).
    pub fn transform_count(&self) -> usize {
        self.transforms.load(Ordering::SeqCst)
    }

    pub fn grad(
        &self,
        program: &Program,
        function: &str,
        opts: &GradOptions,
    ) -> Result<Arc<GradResult>, TransformError> {
        self.grad_in(program, fingerprint(program), function, opts, &[])
    }

    fn grad_in(
        &self,
        program: &Program,
        fp: u64,
        function: &str,
        opts: &GradOptions,
        chain: &[String],
    ) -> Result<Arc<GradResult>, TransformError> {
        if chain.iter().any(|c| c == function) {
            let mut names: Vec<&str> = chain.iter().map(String::as_str).collect();
            names.push(function);
            return Err(TransformError::Recursion(names.join(" -> ")));
        }
        let key = CacheKey {
            program: fp,
            function: function.to_string(),
            options: opts.clone(),
        };
        let slot = {
            let mut cache = self.cache.lock().expect("cache lock");
            cache.entry(key).or_default().clone()
        };
        slot.get_or_init(|| {
            self.transforms.fetch_add(1, Ordering::SeqCst);
            self.generate(program, fp, function, opts, chain).map(Arc::new)
        })
        .clone()
    }

    fn generate(
        &self,
        program: &Program,
        fp: u64,
        function: &str,
        opts: &GradOptions,
        chain: &[String],
    ) -> Result<GradResult, TransformError> {
        let f = program
            .get(function)
            .ok_or_else(|| TransformError::NoFunction(function.to_string()))?;
        let diags: Vec<Diagnostic> = validate_subset(f, program)
            .into_iter()
            .filter(|d| d.is_error())
            .collect();
        if !diags.is_empty() {
            return Err(TransformError::Subset {
                function: function.to_string(),
                diagnostics: diags,
            });
        }
        if opts.wrt.is_empty() {
            return Err(TransformError::BadWrt("at least one parameter is required".into()));
        }
        let mut wrt_names = Vec::new();
        for (i, w) in opts.wrt.iter().enumerate() {
            let p = f.params.get(*w).ok_or_else(|| {
                TransformError::BadWrt(format!(
                    "`{}` has {} parameters, index {w} is out of range",
                    f.name,
                    f.params.len()
                ))
            })?;
            if opts.wrt[..i].contains(w) {
                return Err(TransformError::BadWrt(format!("index {w} repeated")));
            }
            wrt_names.push(p.name.clone());
        }
        let name = grad_name(program, f, &wrt_names);

        let mut inner_chain = chain.to_vec();
        inner_chain.push(function.to_string());
        let mut callee = |g: &str, wrt: Vec<usize>| {
            let o = GradOptions {
                wrt,
                seed_param: None,
                preserve_result: false,
                optimize: opts.optimize,
                truncations: Vec::new(),
            };
            self.grad_in(program, fp, g, &o, &inner_chain)
        };
        let out = gen::generate(&self.registry, program, f, opts, &wrt_names, &name, &mut callee)?;

        let mut fn_ast = out.def;
        let mut warnings = out.warnings;
        if opts.optimize {
            let (optimized, w) = run_pipeline(&fn_ast, &PassConfig::default());
            fn_ast = optimized;
            warnings.extend(w);
        }
        let mut support: Vec<FunctionDef> = Vec::new();
        for c in &out.callees {
            for g in c.functions() {
                if g.name != fn_ast.name && !support.iter().any(|s| s.name == g.name) {
                    support.push(g);
                }
            }
        }
        // names reserved during generation but unused in the final code are not adjoints
        let mut used: BTreeSet<String> = fn_ast.params.iter().map(|p| p.name.clone()).collect();
        for s in &fn_ast.body {
            s.visit(&mut |t| {
                used.extend(stmt_defs(t));
                used.extend(stmt_uses(t));
            });
        }
        let adjoints = out.adjoints.into_iter().filter(|(a, _)| used.contains(a)).collect();
        let mut source = emit(&fn_ast);
        for s in &support {
            source.push('\n');
            source.push_str(&emit(s));
        }
        Ok(GradResult {
            source,
            fn_ast,
            support,
            wrt: opts.wrt.clone(),
            slots: out.slots,
            warnings,
            adjoints,
        })
    }
}

fn fingerprint(program: &Program) -> u64 {
    let mut h = DefaultHasher::new();
    emit_program(program).hash(&mut h);
    h.finish()
}

/// `d<function>d<params>`, made unique against the program's functions.
fn grad_name(program: &Program, f: &FunctionDef, wrt: &[String]) -> String {
    let mut name = format!("d{}d{}", f.name, wrt.concat());
    while program.get(&name).is_some() {
        name.push('_');
    }
    name
}

/// Differentiate `function` of `program` with the built-in adjoints.
pub fn grad(program: &Program, function: &str, opts: &GradOptions) -> Result<GradResult, TransformError> {
    let d = Differentiator::new();
    d.grad(program, function, opts).map(|r| (*r).clone())
}

/// Gradient in which only the last `keep` iterations of loop `loop_id`
/// (counted from the end of the primal) propagate adjoints; earlier
/// iterations pass the adjoint through unchanged.
pub fn truncate_loop_adjoint(
    program: &Program,
    function: &str,
    opts: &GradOptions,
    loop_id: usize,
    keep: usize,
) -> Result<GradResult, TransformError> {
    grad(program, function, &opts.clone().truncate(loop_id, keep))
}
