//! Two identical, non-interacting oscillators coupled only through continuous
//! measurement of the angular momentum `M_z = x1 p2 − x2 p1`.
//!
//! Phase-space ordering is `(x1, p1, x2, p2)` throughout.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{build, Node, ObservableExpr, Var};
use crate::phase::{noise_derivative, poisson_bracket_expr, MeasurementSpec};
use crate::sde::{Drift, MomentReport, MomentSnapshot, SdeSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompositeError {
    #[error("invalid oscillator parameters: {0}")]
    Parameters(String),
    #[error("|M| = {m_abs} must be below 2E/omega0 = {bound} (requires mE^2/k - M^2/4 > 0)")]
    Inadmissible { m_abs: f64, bound: f64 },
    #[error("energy must be positive, got {0}")]
    NonPositiveEnergy(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorPair {
    pub m: f64,
    pub k: f64,
    pub kappa: f64,
}

impl OscillatorPair {
    pub fn new(m: f64, k: f64, kappa: f64) -> Result<Self, CompositeError> {
        if !(m > 0.0 && m.is_finite()) || !(k > 0.0 && k.is_finite()) {
            return Err(CompositeError::Parameters(format!("m = {m} and k = {k} must be positive")));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(CompositeError::Parameters(format!("kappa = {kappa} must be non-negative")));
        }
        Ok(Self { m, k, kappa })
    }

    pub fn omega0(&self) -> f64 {
        (self.k / self.m).sqrt()
    }

    /// `H = (p1² + p2²)/2m + k (x1² + x2²)/2`.
    pub fn hamiltonian(&self) -> ObservableExpr {
        let half_k = build::constant(0.5 * self.k);
        let inv_2m = build::constant(0.5 / self.m);
        let sq = |v: Var| build::pow(Node::Var(v), 2);
        let kinetic = build::mul(inv_2m, build::add(sq(Var::P(1)), sq(Var::P(2))));
        let potential = build::mul(half_k, build::add(sq(Var::Q(1)), sq(Var::Q(2))));
        ObservableExpr::new(build::add(kinetic, potential), 2).expect("two degrees of freedom")
    }

    /// Drift of the free motion as a 4×4 matrix.
    pub fn drift_matrix(&self) -> DMatrix<f64> {
        let (im, k) = (1.0 / self.m, self.k);
        DMatrix::from_row_slice(
            4,
            4,
            &[0.0, im, 0.0, 0.0, -k, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, im, 0.0, 0.0, -k, 0.0],
        )
    }

    /// Measured ensemble system with linear free drift and `M_z` noise.
    pub fn sde_system(&self) -> SdeSystem {
        let spec = MeasurementSpec::new(angular_momentum(), self.kappa).expect("kappa validated");
        SdeSystem::new(4, Drift::linear(&self.drift_matrix()), Some(spec)).expect("consistent dimensions")
    }

    /// Energy of oscillator 1 from raw moments.
    pub fn e1(&self, s: &SecondMoments4) -> f64 {
        s.get(1, 1) / (2.0 * self.m) + 0.5 * self.k * s.get(0, 0)
    }

    pub fn e2(&self, s: &SecondMoments4) -> f64 {
        s.get(3, 3) / (2.0 * self.m) + 0.5 * self.k * s.get(2, 2)
    }

    /// Point `(x1, 0, 0, p2)` with the requested oscillator energies.
    pub fn point_with_energies(&self, e1: f64, e2: f64) -> [f64; 4] {
        [(2.0 * e1 / self.k).sqrt(), 0.0, 0.0, (2.0 * self.m * e2).sqrt()]
    }

    fn check_admissible(&self, e: f64, m: f64) -> Result<(), CompositeError> {
        if !(e > 0.0 && e.is_finite()) {
            return Err(CompositeError::NonPositiveEnergy(e));
        }
        if !(self.m * e * e / self.k - m * m / 4.0 > 0.0) {
            return Err(CompositeError::Inadmissible { m_abs: m.abs(), bound: 2.0 * e / self.omega0() });
        }
        Ok(())
    }
}

/// `M_z = x1 p2 − x2 p1`.
pub fn angular_momentum() -> ObservableExpr {
    let root = build::sub(
        build::mul(Node::Var(Var::Q(1)), Node::Var(Var::P(2))),
        build::mul(Node::Var(Var::Q(2)), Node::Var(Var::P(1))),
    );
    ObservableExpr::new(root, 2).expect("two degrees of freedom")
}

/// Upper-triangle index pairs, in storage order.
pub const MOMENT_PAIRS: [(usize, usize); 10] =
    [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)];

pub const MOMENT_LABELS: [&str; 10] =
    ["x1x1", "x1p1", "x1x2", "x1p2", "p1p1", "p1x2", "p1p2", "x2x2", "x2p2", "p2p2"];

pub fn moment_index(i: usize, k: usize) -> usize {
    let (i, k) = if i <= k { (i, k) } else { (k, i) };
    MOMENT_PAIRS.iter().position(|&p| p == (i, k)).expect("indices below 4")
}

/// The ten independent raw second moments over `(x1, p1, x2, p2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondMoments4 {
    pub values: [f64; 10],
}

impl SecondMoments4 {
    pub fn zero() -> Self {
        Self { values: [0.0; 10] }
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let mut values = [0.0; 10];
        for (n, &(i, k)) in MOMENT_PAIRS.iter().enumerate() {
            values[n] = 0.5 * (m[(i, k)] + m[(k, i)]);
        }
        Self { values }
    }

    pub fn from_snapshot(s: &MomentSnapshot) -> Self {
        let mut values = [0.0; 10];
        for (n, &(i, k)) in MOMENT_PAIRS.iter().enumerate() {
            values[n] = s.second_moment[i][k];
        }
        Self { values }
    }

    /// Moments of a point mass at `x`.
    pub fn from_point(x: &[f64; 4]) -> Self {
        let mut values = [0.0; 10];
        for (n, &(i, k)) in MOMENT_PAIRS.iter().enumerate() {
            values[n] = x[i] * x[k];
        }
        Self { values }
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[moment_index(i, k)]
    }

    pub fn set(&mut self, i: usize, k: usize, v: f64) {
        self.values[moment_index(i, k)] = v;
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, k| self.get(i, k))
    }

    /// `⟨x1 p2⟩ − ⟨x2 p1⟩`.
    pub fn angular_momentum(&self) -> f64 {
        self.get(0, 3) - self.get(2, 1)
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        let m = self.matrix();
        let scale = m.amax().max(1.0);
        m.symmetric_eigenvalues().min() >= -tol * scale
    }
}

/// Linear map `G` with `ds/dt = G s`, built by applying
/// `A ↦ {A, H} + κ (w·∇)² A` to each quadratic monomial.
pub fn moment_generator(pair: &OscillatorPair) -> DMatrix<f64> {
    let h = pair.hamiltonian();
    let mz = angular_momentum();
    let mut g = DMatrix::zeros(10, 10);
    for (row, &(i, k)) in MOMENT_PAIRS.iter().enumerate() {
        let monomial = ObservableExpr::new(
            build::mul(Node::Var(Var::from_slot(i)), Node::Var(Var::from_slot(k))),
            2,
        )
        .expect("two degrees of freedom");
        let hamiltonian_part = poisson_bracket_expr(&monomial, &h);
        let noise_part = noise_derivative(&mz, &noise_derivative(&mz, &monomial));
        let rhs = build::add(
            hamiltonian_part.root().clone(),
            build::mul(build::constant(pair.kappa), noise_part.root().clone()),
        );
        let f = |x: [f64; 4]| rhs.eval_raw(&x);
        let unit = |a: usize| {
            let mut x = [0.0; 4];
            x[a] = 1.0;
            x
        };
        // rhs is a quadratic form; read its coefficients by polarization
        let diag: Vec<f64> = (0..4).map(|a| f(unit(a))).collect();
        for (col, &(a, b)) in MOMENT_PAIRS.iter().enumerate() {
            g[(row, col)] = if a == b {
                diag[a]
            } else {
                let mut x = unit(a);
                x[b] = 1.0;
                f(x) - diag[a] - diag[b]
            };
        }
    }
    g
}

pub fn second_moment_rhs(pair: &OscillatorPair, s: &SecondMoments4) -> SecondMoments4 {
    apply(&moment_generator(pair), s)
}

fn apply(g: &DMatrix<f64>, s: &SecondMoments4) -> SecondMoments4 {
    let v = g * DVector::from_column_slice(&s.values);
    let mut values = [0.0; 10];
    values.copy_from_slice(v.as_slice());
    SecondMoments4 { values }
}

/// Exact solution `s(t) = exp(G t) s0` at each requested time.
pub fn integrate_moments(pair: &OscillatorPair, s0: &SecondMoments4, times: &[f64]) -> Vec<SecondMoments4> {
    let g = moment_generator(pair);
    times.iter().map(|&t| apply(&(&g * t).exp(), s0)).collect()
}

/// Closed-form energies: the difference decays at rate `4κ`, the sum is conserved.
pub fn energy_relaxation(e1_0: f64, e2_0: f64, kappa: f64, t: f64) -> (f64, f64) {
    let mean = 0.5 * (e1_0 + e2_0);
    let dev = (e1_0 - mean) * (-4.0 * kappa * t).exp();
    (mean + dev, mean - dev)
}

/// Stationary moments for energy `E` per oscillator and angular momentum `M`.
pub fn stationary_moments(e: f64, m: f64, pair: &OscillatorPair) -> Result<SecondMoments4, CompositeError> {
    pair.check_admissible(e, m)?;
    let mut s = SecondMoments4::zero();
    s.set(0, 0, e / pair.k);
    s.set(2, 2, e / pair.k);
    s.set(1, 1, pair.m * e);
    s.set(3, 3, pair.m * e);
    s.set(0, 3, m / 2.0);
    s.set(2, 1, -m / 2.0);
    Ok(s)
}

/// `(β⁻¹, β)` of the stationary Gaussian, `β` from its closed form.
pub fn beta_matrices(e: f64, m: f64, pair: &OscillatorPair) -> Result<(Matrix4<f64>, Matrix4<f64>), CompositeError> {
    let inv = stationary_moments(e, m, pair)?.matrix();
    let (xx, pp, h) = (e / pair.k, pair.m * e, m / 2.0);
    let det = pair.m * e * e / pair.k - m * m / 4.0;
    #[rustfmt::skip]
    let beta = Matrix4::new(
        pp, 0.0, 0.0, -h,
        0.0, xx, h, 0.0,
        0.0, h, pp, 0.0,
        -h, 0.0, 0.0, xx,
    ) / det;
    Ok((inv, beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsParams {
    pub beta: f64,
    pub omega: f64,
    pub kt_eff: f64,
    pub energy: f64,
    pub angular_momentum: f64,
}

impl GibbsParams {
    /// `β (H − Ω M_z)` at phase point `y`.
    pub fn exponent(&self, pair: &OscillatorPair, y: &[f64; 4]) -> f64 {
        let h = (y[1] * y[1] + y[3] * y[3]) / (2.0 * pair.m) + 0.5 * pair.k * (y[0] * y[0] + y[2] * y[2]);
        let mz = y[0] * y[3] - y[2] * y[1];
        self.beta * (h - self.omega * mz)
    }
}

/// Effective inverse temperature, rotation rate and temperature of the
/// stationary state written as `exp(−β (H − Ω M_z))`.
pub fn gibbs_parameters(e: f64, m: f64, pair: &OscillatorPair) -> Result<GibbsParams, CompositeError> {
    pair.check_admissible(e, m)?;
    let w2 = pair.omega0().powi(2);
    Ok(GibbsParams {
        beta: e / (w2 * (pair.m * e * e / pair.k - m * m / 4.0)),
        omega: m * w2 / (2.0 * e),
        kt_eff: e - m * m * w2 / (4.0 * e),
        energy: e,
        angular_momentum: m,
    })
}

/// Energy and angular-momentum statistics at one record time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeRow {
    pub t: f64,
    pub e1: f64,
    pub e1_stderr: f64,
    pub e2: f64,
    pub e2_stderr: f64,
    pub x1p2: f64,
    pub x2p1: f64,
    pub m: f64,
    pub m_stderr: f64,
    pub total: f64,
    pub total_stderr: f64,
}

/// Per-entry standard errors are combined in quadrature.
pub fn composite_rows(pair: &OscillatorPair, report: &MomentReport) -> Vec<CompositeRow> {
    let (cp, cx) = (0.5 / pair.m, 0.5 * pair.k);
    report
        .snapshots
        .iter()
        .map(|s| {
            let (e1, e1_stderr) = s.quadratic_form(&[(1, 1, cp), (0, 0, cx)]);
            let (e2, e2_stderr) = s.quadratic_form(&[(3, 3, cp), (2, 2, cx)]);
            let (m, m_stderr) = s.quadratic_form(&[(0, 3, 1.0), (2, 1, -1.0)]);
            let (total, total_stderr) = s.quadratic_form(&[(1, 1, cp), (0, 0, cx), (3, 3, cp), (2, 2, cx)]);
            CompositeRow {
                t: s.t,
                e1,
                e1_stderr,
                e2,
                e2_stderr,
                x1p2: s.second_moment[0][3],
                x2p1: s.second_moment[2][1],
                m,
                m_stderr,
                total,
                total_stderr,
            }
        })
        .collect()
}

pub fn composite_csv(rows: &[CompositeRow]) -> String {
    let mut out = String::from("t,E1,E1_stderr,E2,E2_stderr,x1p2,x2p1,M,M_stderr,E_total,E_total_stderr\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t, r.e1, r.e1_stderr, r.e2, r.e2_stderr, r.x1p2, r.x2p1, r.m, r.m_stderr, r.total, r.total_stderr
        )
        .unwrap();
    }
    out
}
