//! Source-to-source reverse-mode differentiation for a small
//! indentation-based numeric language.

pub mod ast;
pub mod diag;
pub mod frontend;
pub mod analysis;
pub mod check;
pub mod corpus;
pub mod registry;
pub mod optimize;
pub mod runtime;
pub mod transform;
