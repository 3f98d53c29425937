//! Tree-walking evaluator for the source language: float64 scalars and
//! n-dimensional arrays, broadcasting kernels, gradient helpers, and the
//! per-call LIFO stack used by generated gradients.

mod interp;
pub mod kernels;
mod value;

use std::fmt;

pub use interp::{eval, EvalOptions, NoopObserver, Observer};
pub use value::{broadcast_shapes, expand_to, NdArray, Value};

use crate::ast::Span;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFrame {
    pub function: String,
    pub span: Span,
}

/// Evaluation failure with the source-level call trace (innermost first).
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeError {
    pub message: String,
    pub trace: Vec<TraceFrame>,
}

impl RuntimeError {
    pub fn new(message: impl Into<String>) -> Self {
        RuntimeError {
            message: message.into(),
            trace: Vec::new(),
        }
    }

    pub(crate) fn at(mut self, function: &str, span: Span) -> Self {
        let already = self
            .trace
            .last()
            .is_some_and(|f| f.function == function);
        if !already {
            self.trace.push(TraceFrame {
                function: function.to_string(),
                span,
            });
        }
        self
    }
}

impl fmt::Display for RuntimeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)?;
        for fr in &self.trace {
            write!(f, "\n  in {} at line {}, column {}", fr.function, fr.span.line, fr.span.col)?;
        }
        Ok(())
    }
}

impl std::error::Error for RuntimeError {}

/// Default used for an omitted optional intrinsic argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgDefault {
    Required,
    None,
    False,
}

/// Parameter names of each intrinsic, in positional order.
pub const INTRINSICS: &[(&str, &[(&str, ArgDefault)])] = {
    use ArgDefault::*;
    &[
        ("tanh", &[("x", Required)]),
        ("exp", &[("x", Required)]),
        ("log", &[("x", Required)]),
        ("sum", &[("x", Required), ("axis", None), ("keepdims", False)]),
        ("mean", &[("x", Required), ("axis", None), ("keepdims", False)]),
        ("dot", &[("a", Required), ("b", Required)]),
        ("multiply", &[("a", Required), ("b", Required)]),
        ("transpose", &[("a", Required)]),
        ("unbroadcast", &[("y", Required), ("like", Required)]),
        ("add_grad", &[("a", Required), ("b", Required)]),
        ("zeros_like", &[("x", Required)]),
        (
            "unreduce",
            &[("g", Required), ("like", Required), ("axis", None), ("keepdims", False)],
        ),
        (
            "unreduce_mean",
            &[("g", Required), ("like", Required), ("axis", None), ("keepdims", False)],
        ),
        ("unindex", &[("g", Required), ("like", Required), ("index", Required)]),
        ("grad_dot_lhs", &[("g", Required), ("a", Required), ("b", Required)]),
        ("grad_dot_rhs", &[("g", Required), ("a", Required), ("b", Required)]),
        ("push", &[("value", Required), ("slot", Required)]),
        ("pop", &[("slot", Required)]),
    ]
};

/// `print` takes any number of arguments and is handled separately.
pub const PRINT: &str = "print";

pub fn intrinsic_signature(name: &str) -> Option<&'static [(&'static str, ArgDefault)]> {
    INTRINSICS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn is_intrinsic(name: &str) -> bool {
    name == PRINT || intrinsic_signature(name).is_some()
}
