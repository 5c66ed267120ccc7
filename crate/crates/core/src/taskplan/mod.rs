//! Task layer: a PDDL subset, STRIPS grounding and cost-optimal forward
//! search whose action costs come from an external oracle.

pub mod ground;
pub mod pddl;
pub mod search;
pub mod sexpr;

use std::fmt;

use thiserror::Error;

pub use ground::{ApplyError, AtomId, GroundAction, Task, TaskState};
pub use pddl::{parse_domain, parse_problem, ActionSchema, Domain, Problem, Proposition};
pub use search::{
    search_optimal_plan, CostOracle, FnOracle, PlanError, PlanStep, SearchOptions, SearchStats,
    TaskPlan,
};
pub use sexpr::Pos;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed text, such as unbalanced parentheses.
    Syntax,
    /// Valid PDDL outside the supported subset.
    Unsupported,
    /// Undeclared names, arity or type mismatches.
    Semantic,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Syntax => "syntax error",
            ErrorKind::Unsupported => "unsupported construct",
            ErrorKind::Semantic => "semantic error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at {line}:{col}: {message}")]
pub struct ParseError {
    pub kind: ErrorKind,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(kind: ErrorKind, pos: Pos, message: impl Into<String>) -> Self {
        ParseError {
            kind,
            line: pos.line,
            col: pos.col,
            message: message.into(),
        }
    }

    /// Syntax error at `pos`.
    pub fn at(pos: Pos, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Syntax, pos, message)
    }
}
