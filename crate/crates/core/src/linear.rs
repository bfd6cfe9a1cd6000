//! Stationary theory of linear systems driven by measurement noise.
//!
//! For `dx = A x dt + noise` with effective diffusion `D` (the κ scale already
//! absorbed), the stationary covariance `X` solves `A X + X Aᵀ = −2 D`.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{gradient, ObservableExpr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearError {
    #[error("drift matrix is not Hurwitz: {0}")]
    NotHurwitz(String),
    #[error("diffusion matrix is invalid: {0}")]
    InvalidDiffusion(String),
    #[error("matrix shapes do not match: {0}")]
    Shape(String),
    #[error("Lyapunov solve failed: {0}")]
    Singular(String),
    #[error("Lyapunov residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
    #[error("observable is not linear in (q1, p1): {0}")]
    NonLinearObservable(String),
    #[error("Zeno form needs b = 0 in measured coordinates, got b = {0}")]
    NonZenoCoupling(f64),
}

/// Drift matrix `[[a, b], [c, d]]` of a decaying one-degree-of-freedom system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl LinearSystem2 {
    /// Requires `a + d < 0` and `ad − bc > 0`, the 2×2 Hurwitz conditions.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, LinearError> {
        let s = Self { a, b, c, d };
        if ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err(LinearError::NotHurwitz("entries must be finite".into()));
        }
        if !(s.trace() < 0.0) {
            return Err(LinearError::NotHurwitz(format!("trace a + d = {} must be negative", s.trace())));
        }
        if !(s.det() > 0.0) {
            return Err(LinearError::NotHurwitz(format!("determinant ad - bc = {} must be positive", s.det())));
        }
        Ok(s)
    }

    pub fn from_matrix(m: &Matrix2<f64>) -> Result<Self, LinearError> {
        Self::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.a, self.b, self.c, self.d)
    }

    /// Largest real part among the eigenvalues (negative for valid systems).
    pub fn slowest_rate(&self) -> f64 {
        let t = self.trace();
        let disc = t * t - 4.0 * self.det();
        if disc >= 0.0 {
            0.5 * (t + disc.sqrt())
        } else {
            0.5 * t
        }
    }
}

/// Symmetric diffusion `[[d1, d], [d, d2]]`, κ included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionMatrix2 {
    pub d1: f64,
    pub d2: f64,
    pub d: f64,
    /// Set when the matrix was built as, or checked to be, rank one.
    pub rank_one: bool,
}

impl DiffusionMatrix2 {
    pub fn new(d1: f64, d2: f64, d: f64) -> Result<Self, LinearError> {
        if ![d1, d2, d].iter().all(|v| v.is_finite()) {
            return Err(LinearError::InvalidDiffusion("entries must be finite".into()));
        }
        if d1 < 0.0 || d2 < 0.0 {
            return Err(LinearError::InvalidDiffusion(format!("diagonal ({d1}, {d2}) must be non-negative")));
        }
        let det = d1 * d2 - d * d;
        let scale = d1.max(d2).max(d.abs()).powi(2);
        if det < -1e-12 * scale {
            return Err(LinearError::InvalidDiffusion(format!("determinant {det} is negative")));
        }
        Ok(Self { d1, d2, d, rank_one: det.abs() <= 1e-12 * scale })
    }

    /// Like [`new`](Self::new) but insists on `d1·d2 = d²`.
    pub fn new_rank_one(d1: f64, d2: f64, d: f64) -> Result<Self, LinearError> {
        let m = Self::new(d1, d2, d)?;
        if !m.rank_one {
            return Err(LinearError::InvalidDiffusion(format!(
                "measurement diffusion must be rank one, d1*d2 - d^2 = {}",
                d1 * d2 - d * d
            )));
        }
        Ok(m)
    }

    /// `κ w wᵀ` for `w = (∂O/∂p, −∂O/∂q)`. `O` must be linear in one degree of freedom.
    pub fn from_observable(o: &ObservableExpr, kappa: f64) -> Result<Self, LinearError> {
        if o.n_dof() != 1 {
            return Err(LinearError::NonLinearObservable(format!("{o} has {} degrees of freedom", o.n_dof())));
        }
        let grad = gradient(o);
        let alpha = grad[0].root().as_const();
        let beta = grad[1].root().as_const();
        match (alpha, beta) {
            (Some(al), Some(be)) => {
                let (w1, w2) = (be, -al);
                // `+ 0.0` maps a signed zero to zero
                Ok(Self { d1: kappa * w1 * w1, d2: kappa * w2 * w2, d: kappa * w1 * w2 + 0.0, rank_one: true })
            }
            _ => Err(LinearError::NonLinearObservable(o.to_string())),
        }
    }

    pub fn zero() -> Self {
        Self { d1: 0.0, d2: 0.0, d: 0.0, rank_one: true }
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.d1, self.d, self.d, self.d2)
    }

    pub fn det(&self) -> f64 {
        self.d1 * self.d2 - self.d * self.d
    }
}

/// Stationary second moments, i.e. the entries of `β⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryMoments2 {
    pub m11: f64,
    pub m12: f64,
    pub m22: f64,
}

impl StationaryMoments2 {
    pub fn from_matrix(x: &Matrix2<f64>) -> Self {
        Self { m11: x[(0, 0)], m12: 0.5 * (x[(0, 1)] + x[(1, 0)]), m22: x[(1, 1)] }
    }

    pub fn beta_inverse(&self) -> Matrix2<f64> {
        Matrix2::new(self.m11, self.m12, self.m12, self.m22)
    }

    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m12
    }

    /// Entropy matrix `β`; `None` for a frozen (singular) state.
    pub fn beta(&self) -> Option<Matrix2<f64>> {
        let det = self.det();
        let scale = self.m11.abs().max(self.m22.abs()).powi(2);
        if det.abs() <= 1e-14 * scale || scale == 0.0 {
            return None;
        }
        Some(Matrix2::new(self.m22, -self.m12, -self.m12, self.m11) / det)
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.m11 >= -tol && self.m22 >= -tol && self.det() >= -tol
    }
}

fn is_hurwitz(a: &DMatrix<f64>) -> Result<(), LinearError> {
    let eig = a.complex_eigenvalues();
    match eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max) {
        m if m < 0.0 => Ok(()),
        m => Err(LinearError::NotHurwitz(format!("largest eigenvalue real part is {m}"))),
    }
}

/// Solves `A X + X Aᵀ = −2 Dm` through the Kronecker form and checks the residual.
pub fn solve_lyapunov(a: &DMatrix<f64>, dm: &DMatrix<f64>) -> Result<DMatrix<f64>, LinearError> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n || dm.nrows() != n || dm.ncols() != n {
        return Err(LinearError::Shape(format!(
            "A is {}x{}, D is {}x{}",
            a.nrows(),
            a.ncols(),
            dm.nrows(),
            dm.ncols()
        )));
    }
    if a.iter().chain(dm.iter()).any(|v| !v.is_finite()) {
        return Err(LinearError::Shape("entries must be finite".into()));
    }
    let dscale = dm.amax();
    if (dm - dm.transpose()).amax() > 1e-12 * dscale {
        return Err(LinearError::InvalidDiffusion("diffusion matrix must be symmetric".into()));
    }
    if dscale > 0.0 {
        let min_eig = dm.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-12 * dscale {
            return Err(LinearError::InvalidDiffusion(format!("not positive semidefinite (eigenvalue {min_eig})")));
        }
    }
    is_hurwitz(a)?;

    // column-major vec: vec(A X) = (I ⊗ A) vec X, vec(X Aᵀ) = (A ⊗ I) vec X
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, dm.iter().map(|v| -2.0 * v));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| LinearError::Singular("Kronecker system is singular".into()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    let x = (&x + x.transpose()) * 0.5;

    let residual = (a * &x + &x * a.transpose() + dm * 2.0).amax();
    let tolerance = 1e-10 * (1.0 + x.amax());
    if !(residual < tolerance) {
        return Err(LinearError::Residual { residual, tolerance });
    }
    Ok(x)
}

/// 2×2 convenience wrapper around [`solve_lyapunov`].
pub fn lyapunov_moments(sys: &LinearSystem2, dm: &DiffusionMatrix2) -> Result<StationaryMoments2, LinearError> {
    let a = DMatrix::from_row_slice(2, 2, &[sys.a, sys.b, sys.c, sys.d]);
    let d = DMatrix::from_row_slice(2, 2, &[dm.d1, dm.d, dm.d, dm.d2]);
    let x = solve_lyapunov(&a, &d)?;
    Ok(StationaryMoments2 { m11: x[(0, 0)], m12: x[(0, 1)], m22: x[(1, 1)] })
}

/// Explicit rational expressions for the three stationary moments.
pub fn closed_form_moments(sys: &LinearSystem2, dm: &DiffusionMatrix2) -> StationaryMoments2 {
    let LinearSystem2 { a, b, c, d } = *sys;
    let DiffusionMatrix2 { d1, d2, d: dd, .. } = *dm;
    let den = (a + d) * (a * d - b * c);
    StationaryMoments2 {
        m11: ((b * c - a * d - d * d) * d1 + 2.0 * b * d * dd - b * b * d2) / den,
        m12: (c * d * d1 - 2.0 * a * d * dd + a * b * d2) / den,
        m22: (-c * c * d1 + 2.0 * a * c * dd + (b * c - a * a - a * d) * d2) / den,
    }
}

/// Sign of the `D` term in the matrix-form identity below.
///
/// The form often quoted in the literature has `+` here. Substituting
/// `A = −I`, `D = diag(1, 0)` then gives `X = −4D` instead of the true `X = D`,
/// so the corrected sign is used.
pub const MATRIX_FORM_D_SIGN: f64 = -1.0;

/// `X = s·((t² + d)/(t d))·D + (A D + D Aᵀ)/d − A D Aᵀ/(t d)` with `s` =
/// [`MATRIX_FORM_D_SIGN`], `t = tr A`, `d = det A`.
pub fn matrix_form_moments(sys: &LinearSystem2, dm: &DiffusionMatrix2) -> StationaryMoments2 {
    let (t, det) = (sys.trace(), sys.det());
    let a = sys.matrix();
    let d = dm.matrix();
    let x = d * (MATRIX_FORM_D_SIGN * (t * t + det) / (t * det)) + (a * d + d * a.transpose()) / det
        - a * d * a.transpose() / (t * det);
    StationaryMoments2::from_matrix(&x)
}

/// Kinetic matrix from its definition `−A β⁻¹` and from `D + (A D − D Aᵀ)/tr A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticMatrix {
    pub from_definition: Matrix2<f64>,
    pub from_drift: Matrix2<f64>,
}

impl KineticMatrix {
    pub fn l(&self) -> Matrix2<f64> {
        self.from_definition
    }

    /// Largest entrywise difference between the two routes.
    pub fn discrepancy(&self) -> f64 {
        (self.from_definition - self.from_drift).amax()
    }

    /// Largest entry of `L + Lᵀ − 2D`.
    pub fn fluctuation_residual(&self, dm: &DiffusionMatrix2) -> f64 {
        (self.from_definition + self.from_definition.transpose() - dm.matrix() * 2.0).amax()
    }

    pub fn asymmetry(&self) -> f64 {
        (self.from_definition[(0, 1)] - self.from_definition[(1, 0)]).abs()
    }
}

pub fn kinetic_matrix(sys: &LinearSystem2, dm: &DiffusionMatrix2) -> Result<KineticMatrix, LinearError> {
    let x = lyapunov_moments(sys, dm)?.beta_inverse();
    let a = sys.matrix();
    let d = dm.matrix();
    Ok(KineticMatrix {
        from_definition: -a * x,
        from_drift: d + (a * d - d * a.transpose()) / sys.trace(),
    })
}

/// `r = b·D2 − c·D1 + (a − d)·D`; zero exactly when the kinetic matrix is symmetric.
pub fn onsager_residual(sys: &LinearSystem2, dm: &DiffusionMatrix2) -> f64 {
    sys.b * dm.d2 - sys.c * dm.d1 + (sys.a - sys.d) * dm.d
}

/// For rank-one diffusion, `det β⁻¹ = r² / (t² d)`.
pub fn frozen_determinant(sys: &LinearSystem2, dm: &DiffusionMatrix2) -> f64 {
    let r = onsager_residual(sys, dm);
    r * r / (sys.trace().powi(2) * sys.det())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Correlation {
    Value(f64),
    /// One coordinate has zero variance; the `|η| = 1` limit.
    Degenerate,
}

impl Correlation {
    pub fn value(&self) -> Option<f64> {
        match self {
            Correlation::Value(v) => Some(*v),
            Correlation::Degenerate => None,
        }
    }
}

/// `η = m12 / √(m11 m22)`.
pub fn correlation_coefficient(m: &StationaryMoments2) -> Correlation {
    let p = m.m11 * m.m22;
    if p <= 0.0 {
        Correlation::Degenerate
    } else {
        Correlation::Value(m.m12 / p.sqrt())
    }
}

/// `1/η²` predicted from the drift and diffusion alone. `None` when the
/// stationary cross moment vanishes.
pub fn inverse_eta_squared(sys: &LinearSystem2, dm: &DiffusionMatrix2) -> Option<f64> {
    let LinearSystem2 { a, b, c, d } = *sys;
    let den = c * d * dm.d1 - 2.0 * a * d * dm.d + a * b * dm.d2;
    if den == 0.0 {
        return None;
    }
    let r = onsager_residual(sys, dm);
    Some(1.0 + sys.det() * r * r / (den * den))
}

/// Residuals of the entropy equations `tr A = −tr(D β)` and
/// `−(β A + Aᵀ β)/2 = β D β`. `None` if `β` does not exist.
pub fn entropy_residuals(sys: &LinearSystem2, dm: &DiffusionMatrix2) -> Result<Option<(f64, f64)>, LinearError> {
    let m = lyapunov_moments(sys, dm)?;
    Ok(m.beta().map(|beta| {
        let a = sys.matrix();
        let d = dm.matrix();
        let trace = (sys.trace() + (d * beta).trace()).abs();
        let quad = (-(beta * a + a.transpose() * beta) * 0.5 - beta * d * beta).amax();
        (trace, quad)
    }))
}

/// Stationary state in measured coordinates `(O, Õ)` with diffusion `[[0,0],[0,D2]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZenoState {
    /// Always zero: the measured quantity is frozen.
    pub o_variance: f64,
    pub conjugate_variance: f64,
    /// Peak of the Gaussian factor in `Õ`.
    pub prefactor: f64,
}

impl ZenoState {
    /// Gaussian factor of the density in `Õ` (the `O` factor is a delta).
    pub fn conjugate_density(&self, o_tilde: f64) -> f64 {
        self.prefactor * (-0.5 * o_tilde * o_tilde / self.conjugate_variance).exp()
    }
}

pub fn zeno_stationary(sys: &LinearSystem2, d2: f64) -> Result<ZenoState, LinearError> {
    if sys.b != 0.0 {
        return Err(LinearError::NonZenoCoupling(sys.b));
    }
    if !(d2 > 0.0 && d2.is_finite()) {
        return Err(LinearError::InvalidDiffusion(format!("D2 = {d2} must be positive")));
    }
    let var = d2 / sys.d.abs();
    Ok(ZenoState {
        o_variance: 0.0,
        conjugate_variance: var,
        prefactor: (2.0 * std::f64::consts::PI * var).sqrt().recip(),
    })
}
