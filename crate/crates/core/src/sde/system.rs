use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::SdeError;
use crate::dsl::ObservableExpr;
use crate::phase::{HamiltonianField, ItoCorrection, MeasurementSpec, PhasePoint};

type FieldFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Deterministic part `K(x)` of the dynamics.
#[derive(Clone)]
pub enum Drift {
    Zero,
    /// `ẋ = A x`, row-major `dim × dim`.
    Linear(Vec<f64>),
    /// Hamilton's equations for a phase function `H`.
    Hamiltonian(HamiltonianField),
    /// Any other vector field, written into the output slice.
    Custom(Arc<FieldFn>),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Zero => f.write_str("Zero"),
            Drift::Linear(a) => f.debug_tuple("Linear").field(a).finish(),
            Drift::Hamiltonian(h) => f.debug_tuple("Hamiltonian").field(h).finish(),
            Drift::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Drift {
    pub fn linear(a: &DMatrix<f64>) -> Self {
        let mut rows = Vec::with_capacity(a.len());
        for i in 0..a.nrows() {
            for k in 0..a.ncols() {
                rows.push(a[(i, k)]);
            }
        }
        Drift::Linear(rows)
    }

    pub fn hamiltonian(h: &ObservableExpr) -> Self {
        Drift::Hamiltonian(HamiltonianField::new(h))
    }

    pub fn custom(f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Drift::Custom(Arc::new(f))
    }

    #[inline]
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Drift::Zero => out.fill(0.0),
            Drift::Linear(a) => {
                let n = x.len();
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &a[i * n..(i + 1) * n];
                    *o = row.iter().zip(x).map(|(r, v)| r * v).sum();
                }
            }
            Drift::Hamiltonian(h) => h.eval_into(x, out),
            Drift::Custom(f) => f(x, out),
        }
    }
}

/// Measurement channel: one Wiener process along `√(2κ) w(x)`.
#[derive(Debug, Clone)]
struct Channel {
    spec: MeasurementSpec,
    field: HamiltonianField,
    ito: ItoCorrection,
    amplitude: f64,
}

/// `dx = K(x) dt + √(2κ) w(x) ∘ dW`, whose Fokker–Planck operator is the drift
/// term plus `κ {O, {O, ·}}`.
#[derive(Debug, Clone)]
pub struct SdeSystem {
    dim: usize,
    drift: Drift,
    channel: Option<Channel>,
}

impl SdeSystem {
    pub fn new(dim: usize, drift: Drift, measurement: Option<MeasurementSpec>) -> Result<Self, SdeError> {
        if dim == 0 || dim % 2 != 0 {
            return Err(SdeError::Dimension(format!("state dimension must be positive and even, got {dim}")));
        }
        match &drift {
            Drift::Linear(a) if a.len() != dim * dim => {
                return Err(SdeError::Dimension(format!(
                    "linear drift has {} entries, expected {}",
                    a.len(),
                    dim * dim
                )));
            }
            Drift::Hamiltonian(h) if h.dim() != dim => {
                return Err(SdeError::Dimension(format!(
                    "Hamiltonian acts on dimension {}, system has {dim}",
                    h.dim()
                )));
            }
            _ => {}
        }
        let channel = match measurement {
            Some(spec) => {
                if spec.observable().dim() != dim {
                    return Err(SdeError::Dimension(format!(
                        "observable acts on dimension {}, system has {dim}",
                        spec.observable().dim()
                    )));
                }
                let field = HamiltonianField::new(spec.observable());
                let ito = ItoCorrection::new(&spec);
                let amplitude = (2.0 * spec.kappa()).sqrt();
                Some(Channel { spec, field, ito, amplitude })
            }
            None => None,
        };
        Ok(Self { dim, drift, channel })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn measurement(&self) -> Option<&MeasurementSpec> {
        self.channel.as_ref().map(|c| &c.spec)
    }

    /// `true` when the measurement channel contributes noise.
    pub fn is_noisy(&self) -> bool {
        self.channel.as_ref().is_some_and(|c| c.amplitude > 0.0)
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        self.drift.eval_into(x, out);
    }

    /// Scaled noise direction `√(2κ) w(x)`; zero without measurement.
    #[inline]
    pub fn noise_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.channel {
            Some(c) if c.amplitude > 0.0 => {
                c.field.eval_into(x, out);
                for o in out.iter_mut() {
                    *o *= c.amplitude;
                }
            }
            _ => out.fill(0.0),
        }
    }

    /// Measurement-induced Itô drift `κ ∂_k D_ik`; zero without measurement.
    #[inline]
    pub fn ito_correction_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.channel {
            Some(c) => c.ito.eval_into(x, out),
            None => out.fill(0.0),
        }
    }

    pub fn check_point(&self, x: &PhasePoint) -> Result<(), SdeError> {
        if x.dim() != self.dim {
            return Err(SdeError::Dimension(format!(
                "point has dimension {}, system has {}",
                x.dim(),
                self.dim
            )));
        }
        Ok(())
    }
}
