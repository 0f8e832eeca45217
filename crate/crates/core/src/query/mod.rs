//! The SQL-like query dialect: lexing, parsing, and planning.
//!
//! ```
//! use chisearch::query::parse;
//!
//! let q = parse("SELECT mask_id FROM masks WHERE CP(mask, full, (0.5, 1.0)) > 100").unwrap();
//! assert_eq!(
//!     q.to_string(),
//!     "SELECT mask_id FROM masks WHERE CP(mask, full, (0.5, 1)) > 100"
//! );
//! ```

pub mod ast;
mod lexer;
mod parser;
mod planner;

use std::fmt;

use thiserror::Error;

pub use ast::Query;
pub use parser::parse;
pub use planner::{
    plan, CpLeaf, Grouping, LeafSource, OutputColumn, PlanContext, PlanError, QueryPlan, Ranking,
    RoiSpec,
};

/// A syntax error at a 1-based line and column.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub expected: Vec<String>,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.col, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(" or "))?;
        }
        Ok(())
    }
}

/// Parses and plans in one step.
pub fn compile(text: &str, ctx: &PlanContext) -> Result<QueryPlan, crate::Error> {
    let ast = parse(text)?;
    Ok(plan(&ast, ctx)?)
}
