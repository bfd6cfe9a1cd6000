use serde::{Deserialize, Serialize};

use super::SdeSystem;
use crate::phase::PhasePoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Heun predictor–corrector on the Stratonovich form. Production scheme.
    #[default]
    HeunStratonovich,
    /// Euler–Maruyama on the Itô form with the measurement drift correction.
    EulerIto,
}

/// Reusable scratch space for in-place stepping.
#[derive(Debug, Clone)]
pub struct Stepper {
    scheme: Scheme,
    k0: Vec<f64>,
    w0: Vec<f64>,
    k1: Vec<f64>,
    w1: Vec<f64>,
    pred: Vec<f64>,
}

impl Stepper {
    pub fn new(scheme: Scheme, dim: usize) -> Self {
        Self {
            scheme,
            k0: vec![0.0; dim],
            w0: vec![0.0; dim],
            k1: vec![0.0; dim],
            w1: vec![0.0; dim],
            pred: vec![0.0; dim],
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Advances `x` by one step of size `dt` with Wiener increment `dw ~ N(0, dt)`.
    #[inline]
    pub fn step(&mut self, system: &SdeSystem, x: &mut [f64], dt: f64, dw: f64) {
        match self.scheme {
            Scheme::HeunStratonovich => self.heun(system, x, dt, dw),
            Scheme::EulerIto => self.euler_ito(system, x, dt, dw),
        }
    }

    #[inline]
    fn heun(&mut self, system: &SdeSystem, x: &mut [f64], dt: f64, dw: f64) {
        system.drift_into(x, &mut self.k0);
        system.noise_into(x, &mut self.w0);
        for i in 0..x.len() {
            self.pred[i] = x[i] + self.k0[i] * dt + self.w0[i] * dw;
        }
        system.drift_into(&self.pred, &mut self.k1);
        system.noise_into(&self.pred, &mut self.w1);
        for i in 0..x.len() {
            x[i] += 0.5 * (self.k0[i] + self.k1[i]) * dt + 0.5 * (self.w0[i] + self.w1[i]) * dw;
        }
    }

    #[inline]
    fn euler_ito(&mut self, system: &SdeSystem, x: &mut [f64], dt: f64, dw: f64) {
        system.drift_into(x, &mut self.k0);
        system.ito_correction_into(x, &mut self.k1);
        system.noise_into(x, &mut self.w0);
        for i in 0..x.len() {
            x[i] += (self.k0[i] + self.k1[i]) * dt + self.w0[i] * dw;
        }
    }
}

/// One Heun step of `dx = K dt + √(2κ) w(x) ∘ dW`.
///
/// With a constant `w` this is exactly Euler–Maruyama for the noise part.
pub fn heun_stratonovich_step(system: &SdeSystem, x: &PhasePoint, dt: f64, dw: f64) -> Vec<f64> {
    let mut out = x.coords().to_vec();
    Stepper::new(Scheme::HeunStratonovich, system.dim()).step(system, &mut out, dt, dw);
    out
}

/// One Euler–Maruyama step of the Itô form `dx = (K + B) dt + √(2κ) w(x) dW`.
pub fn euler_maruyama_ito_step(system: &SdeSystem, x: &PhasePoint, dt: f64, dw: f64) -> Vec<f64> {
    let mut out = x.coords().to_vec();
    Stepper::new(Scheme::EulerIto, system.dim()).step(system, &mut out, dt, dw);
    out
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::dsl::parse_observable;
    use crate::phase::MeasurementSpec;
    use crate::sde::Drift;

    fn pt(v: &[f64]) -> PhasePoint {
        PhasePoint::new(v.to_vec()).unwrap()
    }

    fn measured(text: &str, n: usize, kappa: f64, drift: Drift) -> SdeSystem {
        let spec = MeasurementSpec::new(parse_observable(text, n).unwrap(), kappa).unwrap();
        SdeSystem::new(2 * n, drift, Some(spec)).unwrap()
    }

    #[test]
    fn noise_off_reduces_to_deterministic_heun() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]);
        let sys = measured("p1", 1, 0.0, Drift::linear(&a));
        let x = [0.3, -0.8];
        let dt = 0.1;
        let got = heun_stratonovich_step(&sys, &pt(&x), dt, 0.77);
        let f = |y: [f64; 2]| [y[1], -y[0] - 0.5 * y[1]];
        let k0 = f(x);
        let xp = [x[0] + dt * k0[0], x[1] + dt * k0[1]];
        let k1 = f(xp);
        let want = [x[0] + 0.5 * dt * (k0[0] + k1[0]), x[1] + 0.5 * dt * (k0[1] + k1[1])];
        assert_eq!(got, want.to_vec());
    }

    #[test]
    fn constant_noise_is_euler_maruyama() {
        let sys = measured("p1", 1, 0.5, Drift::Zero);
        let got = heun_stratonovich_step(&sys, &pt(&[0.25, -1.0]), 0.01, 0.037);
        assert_eq!(got, vec![0.25 + 0.037, -1.0]);
    }

    #[test]
    fn angular_momentum_drift_per_step_is_second_order() {
        let mz = parse_observable("x1*p2 - x2*p1", 2).unwrap();
        let sys = measured("x1*p2 - x2*p1", 2, 0.5, Drift::Zero);
        let x = pt(&[1.0, 0.5, -0.3, 0.8]);
        let m0 = mz.evaluate(x.coords()).unwrap();
        // a fixed normalized increment, shrinking dt
        let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
            .iter()
            .map(|&dt: &f64| {
                let y = heun_stratonovich_step(&sys, &x, dt, 0.9 * dt.sqrt());
                (mz.evaluate(&y).unwrap() - m0).abs()
            })
            .collect();
        // error ∝ dW⁴ ∝ dt², so halving dt divides it by ~4
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.2, "{errs:?}");
        }
    }

    #[test]
    fn ito_step_includes_correction() {
        // O = (q²+p²)/2 gives B = −κ x
        let sys = measured("(q1^2+p1^2)/2", 1, 0.5, Drift::Zero);
        let got = euler_maruyama_ito_step(&sys, &pt(&[1.0, 2.0]), 0.1, 0.0);
        assert!((got[0] - 0.95).abs() < 1e-15 && (got[1] - 1.9).abs() < 1e-15, "{got:?}");
    }
}
