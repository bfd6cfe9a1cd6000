//! Symbolic differentiation and the small set of local rewrites applied
//! while building derivative trees.

use super::expr::{Node, ObservableExpr, Var};

fn folded(v: f64) -> Option<Node> {
    v.is_finite().then_some(Node::Const(v))
}

pub fn constant(c: f64) -> Node {
    Node::Const(c)
}

pub fn var(v: Var) -> Node {
    Node::Var(v)
}

pub fn neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

pub fn add(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => folded(x + y).unwrap_or_else(|| Node::Add(Box::new(a), Box::new(b))),
        (Some(x), None) if x == 0.0 => b,
        (None, Some(y)) if y == 0.0 => a,
        _ => Node::Add(Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => folded(x - y).unwrap_or_else(|| Node::Sub(Box::new(a), Box::new(b))),
        (Some(x), None) if x == 0.0 => neg(b),
        (None, Some(y)) if y == 0.0 => a,
        _ => Node::Sub(Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => folded(x * y).unwrap_or_else(|| Node::Mul(Box::new(a), Box::new(b))),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Node::Const(0.0),
        (Some(x), None) if x == 1.0 => b,
        (None, Some(y)) if y == 1.0 => a,
        (Some(x), None) if x == -1.0 => neg(b),
        (None, Some(y)) if y == -1.0 => neg(a),
        _ => Node::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        // a zero denominator is kept so evaluation can report it
        (Some(x), Some(y)) if y != 0.0 => {
            folded(x / y).unwrap_or_else(|| Node::Div(Box::new(a), Box::new(b)))
        }
        (Some(x), _) if x == 0.0 && b.as_const() != Some(0.0) => Node::Const(0.0),
        (None, Some(y)) if y == 1.0 => a,
        _ => Node::Div(Box::new(a), Box::new(b)),
    }
}

pub fn pow(a: Node, n: i32) -> Node {
    match (a.as_const(), n) {
        (_, 0) => Node::Const(1.0),
        (_, 1) => a,
        (Some(x), _) if !(x == 0.0 && n < 0) => {
            folded(x.powi(n)).unwrap_or_else(|| Node::Pow(Box::new(a), n))
        }
        _ => Node::Pow(Box::new(a), n),
    }
}

pub fn sin(a: Node) -> Node {
    match a.as_const() {
        Some(x) => Node::Const(x.sin()),
        None => Node::Sin(Box::new(a)),
    }
}

pub fn cos(a: Node) -> Node {
    match a.as_const() {
        Some(x) => Node::Const(x.cos()),
        None => Node::Cos(Box::new(a)),
    }
}

pub fn sqrt(a: Node) -> Node {
    match a.as_const() {
        Some(x) if x >= 0.0 => Node::Const(x.sqrt()),
        _ => Node::Sqrt(Box::new(a)),
    }
}

pub fn atan2(y: Node, x: Node) -> Node {
    match (y.as_const(), x.as_const()) {
        (Some(a), Some(b)) => Node::Const(a.atan2(b)),
        _ => Node::Atan2(Box::new(y), Box::new(x)),
    }
}

/// Exact partial derivative of `node` with respect to `v`.
pub fn derivative(node: &Node, v: Var) -> Node {
    match node {
        Node::Const(_) => constant(0.0),
        Node::Var(w) => constant(if *w == v { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(derivative(a, v)),
        Node::Add(a, b) => add(derivative(a, v), derivative(b, v)),
        Node::Sub(a, b) => sub(derivative(a, v), derivative(b, v)),
        Node::Mul(a, b) => add(
            mul(derivative(a, v), (**b).clone()),
            mul((**a).clone(), derivative(b, v)),
        ),
        Node::Div(a, b) if b.as_const().is_some() => div(derivative(a, v), (**b).clone()),
        Node::Div(a, b) => {
            // (a' b - a b') / b^2
            let da = derivative(a, v);
            let db = derivative(b, v);
            let num = sub(mul(da, (**b).clone()), mul((**a).clone(), db));
            div(num, pow((**b).clone(), 2))
        }
        Node::Pow(a, n) => mul(
            mul(constant(*n as f64), pow((**a).clone(), n - 1)),
            derivative(a, v),
        ),
        Node::Sin(a) => mul(cos((**a).clone()), derivative(a, v)),
        Node::Cos(a) => neg(mul(sin((**a).clone()), derivative(a, v))),
        Node::Sqrt(a) => div(derivative(a, v), mul(constant(2.0), sqrt((**a).clone()))),
        Node::Atan2(y, x) => {
            // (x y' - y x') / (x^2 + y^2)
            let num = sub(
                mul((**x).clone(), derivative(y, v)),
                mul((**y).clone(), derivative(x, v)),
            );
            let den = add(pow((**x).clone(), 2), pow((**y).clone(), 2));
            div(num, den)
        }
    }
}

/// Differentiates `expr` with respect to `v`.
///
/// Panics if `v` is not a variable of `expr`'s phase space.
pub fn differentiate(expr: &ObservableExpr, v: Var) -> ObservableExpr {
    assert!(
        v.index() >= 1 && v.index() <= expr.n_dof(),
        "variable {v} is not defined for n_dof = {}",
        expr.n_dof()
    );
    expr.with_root(derivative(expr.root(), v))
}

/// Gradient in canonical order `(d/dq1, d/dp1, d/dq2, ...)`.
pub fn gradient(expr: &ObservableExpr) -> Vec<ObservableExpr> {
    (0..expr.dim()).map(|s| differentiate(expr, Var::from_slot(s))).collect()
}
