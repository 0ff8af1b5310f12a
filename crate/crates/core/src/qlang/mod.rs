//! Query language: parsing, checking, change sets and planning.

mod ast;
mod check;
mod parser;
mod plan;

pub use ast::{BinOp, DomainDecl, Expr, Query, UnOp};
pub use check::{
    compute_change_set, typecheck, CExpr, ChangeSet, DomainVar, FieldWatch, Kind, TypeError,
    TypedQuery,
};
pub use parser::{parse_query, ParseError};
pub use plan::{plan_query, HashJoinPlan, PlanKind, QueryPlan};

use thiserror::Error;

use crate::qvm::Program;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Parse and type-check in one step.
pub fn compile_query(text: &str, program: &Program) -> Result<TypedQuery, QueryError> {
    Ok(typecheck(&parse_query(text)?, program)?)
}
