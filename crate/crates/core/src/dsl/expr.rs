use std::fmt;

use thiserror::Error;

/// A phase-space variable. Indices are 1-based, matching the textual form
/// `q<i>` / `p<i>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Q(usize),
    P(usize),
}

impl Var {
    /// Position of this variable in a canonically ordered phase point
    /// `(q1, p1, q2, p2, ...)`.
    pub fn slot(self) -> usize {
        match self {
            Var::Q(i) => 2 * (i - 1),
            Var::P(i) => 2 * (i - 1) + 1,
        }
    }

    /// Inverse of [`Var::slot`].
    pub fn from_slot(slot: usize) -> Self {
        if slot % 2 == 0 {
            Var::Q(slot / 2 + 1)
        } else {
            Var::P(slot / 2 + 1)
        }
    }

    pub fn index(self) -> usize {
        match self {
            Var::Q(i) | Var::P(i) => i,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Q(i) => write!(f, "q{i}"),
            Var::P(i) => write!(f, "p{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Sqrt(Box<Node>),
    /// `atan2(y, x)`
    Atan2(Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("point has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("division by zero in `{expr}`")]
    DivisionByZero { expr: String },
    #[error("square root of negative value {value} in `{expr}`")]
    SqrtOfNegative { expr: String, value: f64 },
}

impl Node {
    /// IEEE evaluation with no domain checks; the hot path of the SDE steppers.
    pub fn eval_raw(&self, x: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(v) => x[v.slot()],
            Node::Neg(a) => -a.eval_raw(x),
            Node::Add(a, b) => a.eval_raw(x) + b.eval_raw(x),
            Node::Sub(a, b) => a.eval_raw(x) - b.eval_raw(x),
            Node::Mul(a, b) => a.eval_raw(x) * b.eval_raw(x),
            Node::Div(a, b) => a.eval_raw(x) / b.eval_raw(x),
            Node::Pow(a, n) => a.eval_raw(x).powi(*n),
            Node::Sin(a) => a.eval_raw(x).sin(),
            Node::Cos(a) => a.eval_raw(x).cos(),
            Node::Sqrt(a) => a.eval_raw(x).sqrt(),
            Node::Atan2(y, xx) => y.eval_raw(x).atan2(xx.eval_raw(x)),
        }
    }

    /// Evaluation that reports the offending subexpression on a domain error.
    pub fn eval_checked(&self, x: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Node::Const(c) => *c,
            Node::Var(v) => x[v.slot()],
            Node::Neg(a) => -a.eval_checked(x)?,
            Node::Add(a, b) => a.eval_checked(x)? + b.eval_checked(x)?,
            Node::Sub(a, b) => a.eval_checked(x)? - b.eval_checked(x)?,
            Node::Mul(a, b) => a.eval_checked(x)? * b.eval_checked(x)?,
            Node::Div(a, b) => {
                let num = a.eval_checked(x)?;
                let den = b.eval_checked(x)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero { expr: self.to_string() });
                }
                num / den
            }
            Node::Pow(a, n) => {
                let base = a.eval_checked(x)?;
                if *n < 0 && base == 0.0 {
                    return Err(EvalError::DivisionByZero { expr: self.to_string() });
                }
                base.powi(*n)
            }
            Node::Sin(a) => a.eval_checked(x)?.sin(),
            Node::Cos(a) => a.eval_checked(x)?.cos(),
            Node::Sqrt(a) => {
                let v = a.eval_checked(x)?;
                if v < 0.0 {
                    return Err(EvalError::SqrtOfNegative { expr: self.to_string(), value: v });
                }
                v.sqrt()
            }
            Node::Atan2(y, xx) => y.eval_checked(x)?.atan2(xx.eval_checked(x)?),
        })
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Largest variable index referenced, 0 if none.
    pub fn max_var_index(&self) -> usize {
        match self {
            Node::Const(_) => 0,
            Node::Var(v) => v.index(),
            Node::Neg(a) | Node::Pow(a, _) | Node::Sin(a) | Node::Cos(a) | Node::Sqrt(a) => {
                a.max_var_index()
            }
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Atan2(a, b) => a.max_var_index().max(b.max_var_index()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Neg(a) | Node::Pow(a, _) | Node::Sin(a) | Node::Cos(a) | Node::Sqrt(a) => {
                1 + a.node_count()
            }
            Node::Add(a, b)
            | Node::Sub(a, b)
            | Node::Mul(a, b)
            | Node::Div(a, b)
            | Node::Atan2(a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Pow(..) => 4,
            // negative literals print with a leading minus, so they bind like Neg
            Node::Const(c) if c.is_sign_negative() => 3,
            _ => 5,
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Node, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    // `{:?}` is the shortest representation that round-trips, e.g. `2.0`, `1e-7`.
    write!(f, "{c:?}")
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prec = self.precedence();
        match self {
            Node::Const(c) => write_const(f, *c),
            Node::Var(v) => write!(f, "{v}"),
            Node::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < 4)
            }
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                let op = match self {
                    Node::Add(..) => " + ",
                    Node::Sub(..) => " - ",
                    Node::Mul(..) => "*",
                    _ => "/",
                };
                // Left-associative: equal precedence on the right needs parentheses
                // to reproduce the same tree.
                write_child(f, a, a.precedence() < prec)?;
                f.write_str(op)?;
                write_child(f, b, b.precedence() <= prec)
            }
            Node::Pow(a, n) => {
                write_child(f, a, a.precedence() <= 4)?;
                if *n < 0 {
                    write!(f, "^({n})")
                } else {
                    write!(f, "^{n}")
                }
            }
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Sqrt(a) => write!(f, "sqrt({a})"),
            Node::Atan2(y, x) => write!(f, "atan2({y}, {x})"),
        }
    }
}

/// A scalar function on the phase space of `n_dof` degrees of freedom.
///
/// Trees are immutable once built and can be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableExpr {
    root: Node,
    n_dof: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("n_dof must be positive")]
    ZeroDof,
    #[error("variable index {index} exceeds n_dof = {n_dof}")]
    VariableOutOfRange { index: usize, n_dof: usize },
}

impl ObservableExpr {
    pub fn new(root: Node, n_dof: usize) -> Result<Self, ExprError> {
        if n_dof == 0 {
            return Err(ExprError::ZeroDof);
        }
        let max = root.max_var_index();
        if max > n_dof {
            return Err(ExprError::VariableOutOfRange { index: max, n_dof });
        }
        Ok(Self { root, n_dof })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    /// Phase-space dimension `2 * n_dof`.
    pub fn dim(&self) -> usize {
        2 * self.n_dof
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, EvalError> {
        if point.len() != self.dim() {
            return Err(EvalError::Dimension { expected: self.dim(), got: point.len() });
        }
        self.root.eval_checked(point)
    }

    /// Unchecked IEEE evaluation. Panics if `point` is shorter than required.
    #[inline]
    pub fn eval_raw(&self, point: &[f64]) -> f64 {
        self.root.eval_raw(point)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.root, Node::Const(_))
    }

    pub(crate) fn with_root(&self, root: Node) -> Self {
        Self { root, n_dof: self.n_dof }
    }
}

impl fmt::Display for ObservableExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}
