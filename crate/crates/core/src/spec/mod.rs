//! Specification model: syntax, builder shorthands, validation and desugaring.

pub mod ast;
pub mod desugar;
pub mod dsl;
pub(crate) mod program;
pub mod validate;

pub use ast::*;
pub use desugar::desugar;
pub use validate::{validate, validate_with, Diagnostic, ValidatedSpec, ValidationError};
