//! Canonical phase-space machinery.
//!
//! Points are ordered `(q1, p1, q2, p2, ..., qn, pn)`; the symplectic form is
//! block diagonal with 2x2 blocks `[[0, 1], [-1, 0]]`. Measuring an observable
//! `O` injects noise along its Hamiltonian vector field
//! `w = ({q1, O}, {p1, O}, ...)`, so the diffusion tensor `D = w wᵀ` always has
//! rank at most one. Everything in this module is unscaled: the coupling `κ`
//! is applied where the SDE or the Fokker–Planck operator is assembled.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dsl::{build, gradient, EvalError, Node, ObservableExpr, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhaseError {
    #[error("phase point must have positive even length, got {0}")]
    OddDimension(usize),
    #[error("phase point coordinate {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("measurement coupling must be finite and nonnegative, got {0}")]
    InvalidKappa(f64),
    #[error("kernel time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("kernel diffusion scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A state in canonical ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint(Vec<f64>);

impl PhasePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self, PhaseError> {
        if coords.is_empty() || coords.len() % 2 != 0 {
            return Err(PhaseError::OddDimension(coords.len()));
        }
        if let Some((index, &value)) = coords.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(PhaseError::NonFinite { index, value });
        }
        Ok(Self(coords))
    }

    pub fn origin(n_dof: usize) -> Self {
        Self(vec![0.0; 2 * n_dof.max(1)])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn n_dof(&self) -> usize {
        self.0.len() / 2
    }

    pub fn q(&self, i: usize) -> f64 {
        self.0[Var::Q(i).slot()]
    }

    pub fn p(&self, i: usize) -> f64 {
        self.0[Var::P(i).slot()]
    }
}

/// A measured observable together with its coupling `κ` (in the scenario's units).
#[derive(Debug, Clone)]
pub struct MeasurementSpec {
    observable: ObservableExpr,
    kappa: f64,
}

impl MeasurementSpec {
    pub fn new(observable: ObservableExpr, kappa: f64) -> Result<Self, PhaseError> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(PhaseError::InvalidKappa(kappa));
        }
        Ok(Self { observable, kappa })
    }

    pub fn observable(&self) -> &ObservableExpr {
        &self.observable
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// Symmetric positive semidefinite diffusion tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionMatrix(DMatrix<f64>);

impl DiffusionMatrix {
    /// `w wᵀ`
    pub fn outer(w: &[f64]) -> Self {
        let n = w.len();
        Self(DMatrix::from_fn(n, n, |i, k| w[i] * w[k]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.0[(i, k)]
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }
}

fn check_dim(expected: usize, point: &PhasePoint) -> Result<(), PhaseError> {
    if point.dim() != expected {
        return Err(PhaseError::DimensionMismatch { expected, got: point.dim() });
    }
    Ok(())
}

/// The Hamiltonian vector field `x ↦ ({q_i, F}, {p_i, F})` of a phase function `F`,
/// kept as closed-form component trees.
///
/// Serves both as the measurement noise direction (for `F = O`) and as the
/// equations of motion (for `F = H`).
#[derive(Debug, Clone)]
pub struct HamiltonianField {
    components: Vec<ObservableExpr>,
    constant: Option<Vec<f64>>,
}

impl HamiltonianField {
    pub fn new(f: &ObservableExpr) -> Self {
        let grad = gradient(f);
        let components: Vec<ObservableExpr> = grad
            .chunks(2)
            .flat_map(|pair| {
                let (dq, dp) = (&pair[0], &pair[1]);
                // {q, F} = dF/dp, {p, F} = -dF/dq
                [dp.clone(), dq.with_root(build::neg(dq.root().clone()))]
            })
            .collect();
        let constant = components
            .iter()
            .map(|c| c.root().as_const())
            .collect::<Option<Vec<f64>>>();
        Self { components, constant }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ObservableExpr] {
        &self.components
    }

    /// `Some(w)` when every component is a constant.
    pub fn constant_value(&self) -> Option<&[f64]> {
        self.constant.as_deref()
    }

    /// Unchecked IEEE evaluation into `out`.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        if let Some(c) = &self.constant {
            out.copy_from_slice(c);
            return;
        }
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval_raw(x);
        }
    }

    pub fn evaluate(&self, point: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
        check_dim(self.dim(), point)?;
        self.components
            .iter()
            .map(|c| c.evaluate(point.coords()).map_err(PhaseError::from))
            .collect()
    }
}

/// Symbolic Poisson bracket `{A, B} = Σ_i (∂A/∂q_i ∂B/∂p_i − ∂A/∂p_i ∂B/∂q_i)`.
pub fn poisson_bracket_expr(a: &ObservableExpr, b: &ObservableExpr) -> ObservableExpr {
    assert_eq!(a.n_dof(), b.n_dof(), "bracket operands must share n_dof");
    let (ga, gb) = (gradient(a), gradient(b));
    let mut acc = build::constant(0.0);
    for i in 0..a.n_dof() {
        let (q, p) = (2 * i, 2 * i + 1);
        let term = build::sub(
            build::mul(ga[q].root().clone(), gb[p].root().clone()),
            build::mul(ga[p].root().clone(), gb[q].root().clone()),
        );
        acc = build::add(acc, term);
    }
    ObservableExpr::new(acc, a.n_dof()).expect("bracket keeps variable indices")
}

/// `{A, B}` at `point`.
pub fn poisson_bracket(
    a: &ObservableExpr,
    b: &ObservableExpr,
    point: &PhasePoint,
) -> Result<f64, PhaseError> {
    if a.n_dof() != b.n_dof() {
        return Err(PhaseError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    check_dim(a.dim(), point)?;
    Ok(poisson_bracket_expr(a, b).evaluate(point.coords())?)
}

/// Directional derivative `(w·∇) f` with `w` the Hamiltonian field of `o`.
///
/// Equals `−{o, f}`; applying it twice gives the double bracket `{o, {o, f}}`.
pub fn noise_derivative(o: &ObservableExpr, f: &ObservableExpr) -> ObservableExpr {
    let field = HamiltonianField::new(o);
    let gf = gradient(f);
    let mut acc = build::constant(0.0);
    for (w, df) in field.components().iter().zip(&gf) {
        acc = build::add(acc, build::mul(w.root().clone(), df.root().clone()));
    }
    ObservableExpr::new(acc, f.n_dof()).expect("directional derivative keeps variable indices")
}

/// Measurement noise direction `w` of observable `o` at `point`.
pub fn noise_vector(o: &ObservableExpr, point: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
    HamiltonianField::new(o).evaluate(point)
}

/// Unscaled measurement diffusion tensor `w wᵀ`.
pub fn diffusion_tensor(o: &ObservableExpr, point: &PhasePoint) -> Result<DiffusionMatrix, PhaseError> {
    Ok(DiffusionMatrix::outer(&noise_vector(o, point)?))
}

/// Closed-form Itô drift `B_i = κ Σ_k ∂(w_i w_k)/∂x_k` induced by measurement.
#[derive(Debug, Clone)]
pub struct ItoCorrection {
    components: Vec<ObservableExpr>,
    kappa: f64,
}

impl ItoCorrection {
    pub fn new(spec: &MeasurementSpec) -> Self {
        let field = HamiltonianField::new(spec.observable());
        let w = field.components();
        let n_dof = spec.observable().n_dof();
        let components = (0..w.len())
            .map(|i| {
                let mut acc = build::constant(0.0);
                for (k, wk) in w.iter().enumerate() {
                    let entry = build::mul(w[i].root().clone(), wk.root().clone());
                    let d = crate::dsl::differentiate(
                        &ObservableExpr::new(entry, n_dof).expect("product keeps indices"),
                        Var::from_slot(k),
                    );
                    acc = build::add(acc, d.root().clone());
                }
                ObservableExpr::new(acc, n_dof).expect("divergence keeps indices")
            })
            .collect();
        Self { components, kappa: spec.kappa() }
    }

    /// Unscaled divergence components `Σ_k ∂D_ik/∂x_k`.
    pub fn divergence(&self) -> &[ObservableExpr] {
        &self.components
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = self.kappa * c.eval_raw(x);
        }
    }

    pub fn evaluate(&self, point: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
        check_dim(self.components.len(), point)?;
        self.components
            .iter()
            .map(|c| Ok(self.kappa * c.evaluate(point.coords())?))
            .collect()
    }
}

pub fn ito_drift_correction(spec: &MeasurementSpec, point: &PhasePoint) -> Result<Vec<f64>, PhaseError> {
    ItoCorrection::new(spec).evaluate(point)
}

/// Free-measurement transition density of the conjugate variable.
///
/// Diffusion along `Õ` with coefficient `kappa_units` gives the normalized
/// heat kernel `(4π κ t)^{-1/2} exp(−(Õ − Õ₁)² / (4 κ t))`, whose variance is
/// `2 κ t`.
pub fn measurement_kernel(
    o_tilde: f64,
    o_tilde_src: f64,
    t: f64,
    kappa_units: f64,
) -> Result<f64, PhaseError> {
    if !(t > 0.0) {
        return Err(PhaseError::NonPositiveTime(t));
    }
    if !(kappa_units > 0.0) {
        return Err(PhaseError::NonPositiveScale(kappa_units));
    }
    let s = 4.0 * kappa_units * t;
    let d = o_tilde - o_tilde_src;
    Ok((PI * s).sqrt().recip() * (-d * d / s).exp())
}

/// Conjugate partner `Õ` with `{O, Õ} = +1` for a single-degree-of-freedom
/// observable linear in `(q, p)`. For `O = p` this is `Õ = −q`; for `O = q`,
/// `Õ = p`.
///
/// Returns `None` when `O` is not linear or has a vanishing gradient.
pub fn linear_conjugate(o: &ObservableExpr) -> Option<ObservableExpr> {
    if o.n_dof() != 1 {
        return None;
    }
    let grad = gradient(o);
    let (alpha, beta) = (grad[0].root().as_const()?, grad[1].root().as_const()?);
    let norm = alpha * alpha + beta * beta;
    if norm == 0.0 {
        return None;
    }
    let root = build::add(
        build::mul(build::constant(-beta / norm), Node::Var(Var::Q(1))),
        build::mul(build::constant(alpha / norm), Node::Var(Var::P(1))),
    );
    ObservableExpr::new(root, 1).ok()
}
