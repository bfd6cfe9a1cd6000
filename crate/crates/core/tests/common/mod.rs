#![allow(dead_code)]

use mnl_core::dsl::{build, Node, ObservableExpr, Var};
use mnl_core::linear::{DiffusionMatrix2, LinearSystem2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random smooth expression in `n_dof` degrees of freedom. Denominators and
/// square-root arguments are kept away from zero so that the derivative is
/// well conditioned everywhere.
pub fn random_node(rng: &mut ChaCha8Rng, n_dof: usize, depth: u32) -> Node {
    if depth == 0 || rng.random_bool(0.2) {
        return if rng.random_bool(0.7) {
            let slot = rng.random_range(0..2 * n_dof);
            Node::Var(Var::from_slot(slot))
        } else {
            Node::Const((rng.random_range(-3.0..3.0f64) * 4.0).round() / 4.0)
        };
    }
    let sub = |rng: &mut ChaCha8Rng| random_node(rng, n_dof, depth - 1);
    match rng.random_range(0..10) {
        0 => build::add(sub(rng), sub(rng)),
        1 => build::sub(sub(rng), sub(rng)),
        2 | 3 => build::mul(sub(rng), sub(rng)),
        4 => {
            let den = build::add(build::constant(1.0), build::pow(sub(rng), 2));
            build::div(sub(rng), den)
        }
        5 => {
            // powers of constant subtrees fold into large coefficients; skip them
            let base = sub(rng);
            if base.as_const().is_some() {
                base
            } else {
                build::pow(base, rng.random_range(2..4))
            }
        }
        6 => build::sin(sub(rng)),
        7 => build::cos(sub(rng)),
        8 => build::sqrt(build::add(build::constant(0.5), build::pow(sub(rng), 2))),
        _ => {
            let x = build::add(build::constant(2.0), build::pow(sub(rng), 2));
            build::atan2(sub(rng), x)
        }
    }
}

pub fn random_expr(rng: &mut ChaCha8Rng, n_dof: usize, depth: u32) -> ObservableExpr {
    ObservableExpr::new(random_node(rng, n_dof, depth), n_dof).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Central-difference gradient by Ridders' extrapolation: the step shrinks
/// geometrically and the tableau entry with the smallest error estimate wins.
pub fn fd_gradient(e: &ObservableExpr, x: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|i| ridders(|t| {
        let mut y = x.to_vec();
        y[i] = t;
        e.eval_raw(&y)
    }, x[i], 1e-2 * x[i].abs().max(1.0))).collect()
}

fn ridders(f: impl Fn(f64) -> f64, x: f64, h0: f64) -> f64 {
    const SHRINK: f64 = 1.4;
    const LEVELS: usize = 30;
    let central = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let mut tab = vec![vec![0.0; LEVELS]; LEVELS];
    let mut h = h0;
    tab[0][0] = central(h);
    let (mut best, mut err) = (tab[0][0], f64::INFINITY);
    for i in 1..LEVELS {
        h /= SHRINK;
        tab[0][i] = central(h);
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            tab[j][i] = (tab[j - 1][i] * fac - tab[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (tab[j][i] - tab[j - 1][i]).abs().max((tab[j][i] - tab[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = tab[j][i];
            }
        }
    }
    best
}

/// A Hurwitz system with eigenvalue margin and a rank-one measurement diffusion.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (LinearSystem2, DiffusionMatrix2) {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let (t, d) = (v[0] + v[3], v[0] * v[3] - v[1] * v[2]);
        if t > -0.05 || d < 0.05 {
            continue;
        }
        let sys = LinearSystem2::new(v[0], v[1], v[2], v[3]).unwrap();
        let (w1, w2) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        let kappa = rng.random_range(0.1..2.0);
        let dm = DiffusionMatrix2 { d1: kappa * w1 * w1, d2: kappa * w2 * w2, d: kappa * w1 * w2, rank_one: true };
        return (sys, dm);
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
