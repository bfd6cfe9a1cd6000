//! Observable definitions: parsing, evaluation and exact partial derivatives.

mod diff;
mod expr;
mod parse;

pub use diff::{differentiate, gradient};
pub use expr::{EvalError, ExprError, Node, ObservableExpr, Var};
pub use parse::{parse_observable, ParseError};

/// Node constructors that apply the local rewrites (`x*0`, `x*1`, `x+0`,
/// constant folding). Use these to build trees programmatically.
pub mod build {
    pub use super::diff::{add, atan2, constant, cos, div, mul, neg, pow, sin, sqrt, sub, var};
}
