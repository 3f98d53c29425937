//! Cleanup passes over generated and user code: algebraic simplification,
//! copy propagation of generated temporaries, and dead code elimination.

mod copyprop;
mod dce;
mod simplify;

pub use copyprop::copy_prop;
pub use dce::dce;
pub use simplify::simplify;

use crate::ast::FunctionDef;
use crate::diag::Diagnostic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Simplify,
    CopyProp,
    Dce,
}

impl Pass {
    pub fn run(self, f: &FunctionDef) -> FunctionDef {
        match self {
            Pass::Simplify => simplify(f),
            Pass::CopyProp => copy_prop(f),
            Pass::Dce => dce(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassConfig {
    pub passes: Vec<Pass>,
    pub fixpoint: bool,
    pub max_iterations: usize,
}

impl Default for PassConfig {
    fn default() -> Self {
        PassConfig {
            passes: vec![Pass::Simplify, Pass::CopyProp, Pass::Dce],
            fixpoint: true,
            max_iterations: 10,
        }
    }
}

impl PassConfig {
    pub fn none() -> Self {
        PassConfig {
            passes: Vec::new(),
            ..PassConfig::default()
        }
    }
}

/// Run the configured passes in order, repeating the whole sequence until
/// nothing changes when `fixpoint` is set. Hitting `max_iterations` first
/// returns the last result with a warning.
pub fn run_pipeline(f: &FunctionDef, cfg: &PassConfig) -> (FunctionDef, Vec<Diagnostic>) {
    let mut cur = f.clone();
    let rounds = if cfg.fixpoint { cfg.max_iterations.max(1) } else { 1 };
    for _ in 0..rounds {
        let mut next = cur.clone();
        for p in &cfg.passes {
            next = p.run(&next);
        }
        if next == cur {
            return (cur, Vec::new());
        }
        cur = next;
    }
    if !cfg.fixpoint {
        return (cur, Vec::new());
    }
    let w = Diagnostic::warning(
        "no-fixpoint",
        format!(
            "optimization of `{}` did not converge within {} iterations",
            f.name, cfg.max_iterations
        ),
        f.span,
    );
    (cur, vec![w])
}
