//! Lexing, parsing, subset validation and pretty-printing.

mod lexer;
pub mod parser;
pub mod printer;
mod validate;

pub use parser::{parse_expr, parse_templates};
pub use printer::{emit, emit_program, expr_to_string, stmt_summary};
pub use validate::validate_subset;

use crate::ast::Program;
use crate::diag::Diagnostic;

/// Source text plus an optional file identifier for messages.
#[derive(Debug, Clone)]
pub struct SourceProgram {
    pub text: String,
    pub path: Option<String>,
}

impl SourceProgram {
    pub fn new(text: impl Into<String>) -> Self {
        SourceProgram {
            text: text.into(),
            path: None,
        }
    }

    pub fn from_file(path: &std::path::Path) -> std::io::Result<Self> {
        Ok(SourceProgram {
            text: std::fs::read_to_string(path)?,
            path: Some(path.display().to_string()),
        })
    }
}

/// Parse a program. An empty file yields an empty program.
pub fn parse(src: &SourceProgram) -> Result<Program, Vec<Diagnostic>> {
    parser::parse_program(&src.text).map_err(|d| vec![d])
}

/// Shorthand for parsing a string.
pub fn parse_str(text: &str) -> Result<Program, Vec<Diagnostic>> {
    parse(&SourceProgram::new(text))
}
