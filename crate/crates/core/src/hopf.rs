//! Auto-oscillator near a Hopf bifurcation with its phase continuously measured.
//!
//! The measurement makes the action `j = (x² + y²)/2` diffuse:
//! `dj = (2εj − 4cj²) dt + √(2D) dW` on `j ≥ 0` with a reflecting wall at zero,
//! while the phase advances at the rotation rate.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::adaptive_simpson;
use crate::sde::trajectory_rng;

/// Relative tolerance of the normalization integral.
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// Log-density drop below the peak at which the upper tail is cut.
const TAIL_DROP: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HopfError {
    #[error("invalid parameters: {0}")]
    Parameters(String),
    #[error("phase is undefined at the origin")]
    Origin,
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("trajectory {trajectory} left the finite range at t = {time}")]
    Blowup { trajectory: usize, time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopfParams {
    pub omega: f64,
    pub epsilon: f64,
    pub c: f64,
    /// Action diffusion constant `D`.
    pub dj: f64,
}

impl HopfParams {
    pub fn new(omega: f64, epsilon: f64, c: f64, dj: f64) -> Result<Self, HopfError> {
        if ![omega, epsilon, c, dj].iter().all(|v| v.is_finite()) {
            return Err(HopfError::Parameters("all parameters must be finite".into()));
        }
        if !(c > 0.0) {
            return Err(HopfError::Parameters(format!("c = {c} must be positive")));
        }
        if !(dj > 0.0) {
            return Err(HopfError::Parameters(format!("D = {dj} must be positive")));
        }
        Ok(Self { omega, epsilon, c, dj })
    }

    /// Action on the limit cycle, `ε / 2c`.
    pub fn limit_cycle_action(&self) -> f64 {
        self.epsilon / (2.0 * self.c)
    }

    pub fn action_drift(&self, j: f64) -> f64 {
        2.0 * self.epsilon * j - 4.0 * self.c * j * j
    }

    /// Unnormalized log stationary density `(εj² − 4cj³/3)/D`.
    pub fn log_weight(&self, j: f64) -> f64 {
        (self.epsilon * j * j - 4.0 * self.c * j * j * j / 3.0) / self.dj
    }

    fn require_supercritical(&self) -> Result<(), HopfError> {
        if self.epsilon > 0.0 {
            Ok(())
        } else {
            Err(HopfError::Parameters(format!("stationary analysis needs epsilon > 0, got {}", self.epsilon)))
        }
    }
}

/// `z (iω + ε − c|z|²)` split into real and imaginary parts.
pub fn cartesian_drift(p: &HopfParams, x: f64, y: f64) -> (f64, f64) {
    let g = p.epsilon - p.c * (x * x + y * y);
    (g * x - p.omega * y, g * y + p.omega * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionAngle {
    pub j: f64,
    /// `−atan2(y, x)` in `(−π, π]`; `None` at the origin.
    pub phi: Option<f64>,
}

pub fn action_angle(x: f64, y: f64) -> ActionAngle {
    let j = 0.5 * (x * x + y * y);
    let phi = (x != 0.0 || y != 0.0).then(|| wrap_angle(-y.atan2(x)));
    ActionAngle { j, phi }
}

/// Maps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Euler–Maruyama step with reflection at `j = 0`.
pub fn action_sde_step(p: &HopfParams, j: f64, dt: f64, dw: f64) -> f64 {
    (j + p.action_drift(j) * dt + (2.0 * p.dj).sqrt() * dw).abs()
}

/// Closed-form ratio of the density at the limit cycle to that at `j = 0`.
pub fn extremum_ratio(p: &HopfParams) -> Result<f64, HopfError> {
    p.require_supercritical()?;
    Ok((p.epsilon.powi(3) / (12.0 * p.dj * p.c * p.c)).exp())
}

/// Normalized stationary action density on `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDensity {
    params: HopfParams,
    peak_log: f64,
    log_norm: f64,
    upper: f64,
}

impl ActionDensity {
    pub fn new(params: HopfParams) -> Result<Self, HopfError> {
        params.require_supercritical()?;
        let peak = params.limit_cycle_action();
        let peak_log = params.log_weight(peak);
        let mut upper = 2.0 * peak;
        while params.log_weight(upper) - peak_log > -TAIL_DROP {
            upper *= 2.0;
        }
        let f = |j: f64| (params.log_weight(j) - peak_log).exp();
        let tol = 0.1 * NORMALIZATION_TOL;
        let mass = adaptive_simpson(f, 0.0, peak, tol) + adaptive_simpson(f, peak, upper, tol);
        Ok(Self { params, peak_log, log_norm: mass.ln(), upper })
    }

    pub fn params(&self) -> &HopfParams {
        &self.params
    }

    /// Beyond this action the density is below `e^{-60}` of its peak.
    pub fn support_end(&self) -> f64 {
        self.upper
    }

    pub fn log_density(&self, j: f64) -> f64 {
        if j < 0.0 {
            return f64::NEG_INFINITY;
        }
        self.params.log_weight(j) - self.peak_log - self.log_norm
    }

    pub fn density(&self, j: f64) -> f64 {
        self.log_density(j).exp()
    }

    /// Probability of `[a, b]`.
    pub fn probability(&self, a: f64, b: f64) -> f64 {
        let (a, b) = (a.max(0.0), b.max(0.0));
        if a >= b {
            return 0.0;
        }
        let peak = self.params.limit_cycle_action();
        let f = |j: f64| self.density(j);
        if a < peak && peak < b {
            adaptive_simpson(f, a, peak, 1e-10) + adaptive_simpson(f, peak, b, 1e-10)
        } else {
            adaptive_simpson(f, a, b, 1e-10)
        }
    }
}

pub fn stationary_action_density(p: &HopfParams, j: f64) -> Result<f64, HopfError> {
    Ok(ActionDensity::new(*p)?.density(j))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopfRunConfig {
    pub n_traj: usize,
    pub dt: f64,
    pub t_final: f64,
    pub burn_in: f64,
    /// Samples recorded per trajectory, evenly spaced after burn-in.
    pub samples_per_traj: usize,
    pub seed: u64,
    /// Starting action; `None` starts on the limit cycle.
    #[serde(default)]
    pub j0: Option<f64>,
    #[serde(default)]
    pub phi0: f64,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl HopfRunConfig {
    /// Run length `2000/ε` with burn-in `10/ε`.
    pub fn standard(p: &HopfParams, n_traj: usize, dt: f64, samples_per_traj: usize, seed: u64) -> Self {
        Self {
            n_traj,
            dt,
            t_final: 2000.0 / p.epsilon,
            burn_in: 10.0 / p.epsilon,
            samples_per_traj,
            seed,
            j0: None,
            phi0: 0.0,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<(), HopfError> {
        let bad = |m: String| Err(HopfError::Config(m));
        if self.n_traj == 0 || self.samples_per_traj == 0 {
            return bad("n_traj and samples_per_traj must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.burn_in >= 0.0 && self.t_final > self.burn_in && self.t_final.is_finite()) {
            return bad(format!("need 0 <= burn_in < t_final, got {} and {}", self.burn_in, self.t_final));
        }
        if self.sample_stride() == 0 {
            return bad("sampling interval is shorter than dt".into());
        }
        if let Some(j0) = self.j0 {
            if !(j0 >= 0.0 && j0.is_finite()) {
                return bad(format!("j0 = {j0} must be non-negative"));
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        Ok(())
    }

    /// Times at which each trajectory is sampled.
    pub fn sample_times(&self) -> Vec<f64> {
        let (burn, stride) = (self.burn_steps(), self.sample_stride());
        (1..=self.samples_per_traj).map(|i| (burn + i * stride) as f64 * self.dt).collect()
    }

    fn burn_steps(&self) -> usize {
        (self.burn_in / self.dt).round() as usize
    }

    fn sample_stride(&self) -> usize {
        let span = self.t_final - self.burn_in;
        ((span / self.samples_per_traj as f64) / self.dt).floor() as usize
    }
}

/// Recorded `(j, φ)` samples, trajectory-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopfSamples {
    pub j: Vec<f64>,
    pub phi: Vec<f64>,
}

pub fn simulate_action(p: &HopfParams, cfg: &HopfRunConfig) -> Result<HopfSamples, HopfError> {
    cfg.validate()?;
    let run = || -> Vec<Result<(Vec<f64>, Vec<f64>), HopfError>> {
        (0..cfg.n_traj).into_par_iter().map(|i| run_one(p, cfg, i)).collect()
    };
    let results = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HopfError::Config(format!("cannot build thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut out = HopfSamples { j: Vec::new(), phi: Vec::new() };
    for r in results {
        let (j, phi) = r?;
        out.j.extend(j);
        out.phi.extend(phi);
    }
    Ok(out)
}

fn run_one(p: &HopfParams, cfg: &HopfRunConfig, index: usize) -> Result<(Vec<f64>, Vec<f64>), HopfError> {
    let mut rng = trajectory_rng(cfg.seed, index as u64);
    let sqrt_dt = cfg.dt.sqrt();
    let mut j = cfg.j0.unwrap_or_else(|| p.limit_cycle_action());
    let mut step = 0usize;
    let mut advance = |j: &mut f64, n: usize, step: &mut usize| -> Result<(), HopfError> {
        for _ in 0..n {
            let dw = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
            *j = action_sde_step(p, *j, cfg.dt, dw);
            *step += 1;
        }
        if j.is_finite() {
            Ok(())
        } else {
            Err(HopfError::Blowup { trajectory: index, time: *step as f64 * cfg.dt })
        }
    };
    advance(&mut j, cfg.burn_steps(), &mut step)?;
    let stride = cfg.sample_stride();
    let mut js = Vec::with_capacity(cfg.samples_per_traj);
    let mut phis = Vec::with_capacity(cfg.samples_per_traj);
    for _ in 0..cfg.samples_per_traj {
        advance(&mut j, stride, &mut step)?;
        js.push(j);
        phis.push(wrap_angle(cfg.phi0 + p.omega * step as f64 * cfg.dt));
    }
    Ok((js, phis))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: u64,
    /// Model density averaged over the bin.
    pub model_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
    pub total: u64,
    /// Samples outside the binned range.
    pub outside: u64,
    /// Model probability outside the binned range.
    pub model_outside: f64,
}

impl Histogram {
    /// Equal-width counts of `samples` on `[lo, hi)`, with `model(a, b)` the
    /// model probability of each bin.
    pub fn build(samples: &[f64], lo: f64, hi: f64, n_bins: usize, model: impl Fn(f64, f64) -> f64) -> Self {
        assert!(n_bins > 0 && hi > lo, "histogram needs a non-empty range");
        let width = (hi - lo) / n_bins as f64;
        let mut counts = vec![0u64; n_bins];
        let mut outside = 0;
        for &s in samples {
            let k = ((s - lo) / width).floor();
            if k >= 0.0 && (k as usize) < n_bins {
                counts[k as usize] += 1;
            } else {
                outside += 1;
            }
        }
        let mut model_mass = 0.0;
        let bins = counts
            .iter()
            .enumerate()
            .map(|(k, &count)| {
                let (left, right) = (lo + width * k as f64, lo + width * (k + 1) as f64);
                let prob = model(left, right);
                model_mass += prob;
                HistogramBin { left, right, count, model_density: prob / width }
            })
            .collect();
        Self { bins, total: samples.len() as u64, outside, model_outside: (1.0 - model_mass).max(0.0) }
    }

    /// `∫|f̂ − f|` between the empirical histogram density and the bin-averaged
    /// model, including mass outside the range.
    pub fn l1_distance(&self) -> f64 {
        let n = self.total as f64;
        let inside: f64 = self
            .bins
            .iter()
            .map(|b| (b.count as f64 / n - b.model_density * (b.right - b.left)).abs())
            .sum();
        inside + (self.outside as f64 / n - self.model_outside).abs()
    }

    /// `bin_left,bin_right,count,model_density`, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count,model_density\n");
        for b in &self.bins {
            writeln!(out, "{},{},{},{}", b.left, b.right, b.count, b.model_density).unwrap();
        }
        out
    }
}

/// Histogram of the action against the stationary density over `[0, support_end)`.
pub fn action_histogram(density: &ActionDensity, samples: &[f64], n_bins: usize, hi: Option<f64>) -> Histogram {
    let hi = hi.unwrap_or_else(|| density.support_end());
    Histogram::build(samples, 0.0, hi, n_bins, |a, b| density.probability(a, b))
}

/// Histogram of the phase on `(−π, π]` against the uniform density.
pub fn phase_histogram(samples: &[f64], n_bins: usize) -> Histogram {
    // shift so that φ = π lands in the last bin
    let shifted: Vec<f64> = samples.iter().map(|&p| if p == PI { PI - 1e-15 } else { p }).collect();
    Histogram::build(&shifted, -PI, PI, n_bins, |a, b| (b - a) / (2.0 * PI))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn std_params(dj: f64) -> HopfParams {
        HopfParams::new(1.0, 0.5, 0.5, dj).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(HopfParams::new(1.0, 0.5, 0.0, 1.0).is_err());
        assert!(HopfParams::new(1.0, 0.5, 0.5, 0.0).is_err());
        assert!(HopfParams::new(1.0, -0.5, 0.5, 1.0).is_ok());
        assert!(ActionDensity::new(HopfParams::new(1.0, -0.5, 0.5, 1.0).unwrap()).is_err());
    }

    #[test]
    fn drift_examples() {
        let p = std_params(1.0);
        let r = 1.0f64.sqrt(); // |z|² = ε/c = 1
        let (th, x, y) = (0.3f64, r * 0.3f64.cos(), r * 0.3f64.sin());
        let (dx, dy) = cartesian_drift(&p, x, y);
        assert!((dx * th.cos() + dy * th.sin()).abs() < 1e-15);
        assert_eq!(cartesian_drift(&p, 0.0, 0.0), (0.0, 0.0));
        let q = HopfParams::new(0.0, 0.5, 0.5, 1.0).unwrap();
        let (dx, dy) = cartesian_drift(&q, 1e-4, 0.0);
        assert!(close(dx, 0.5e-4, 1e-7) && dy == 0.0);
    }

    #[test]
    fn action_angle_examples() {
        assert_eq!(action_angle(1.0, 0.0), ActionAngle { j: 0.5, phi: Some(0.0) });
        let a = action_angle(0.0, 1.0);
        assert_eq!(a.j, 0.5);
        assert!(close(a.phi.unwrap(), -PI / 2.0, 1e-15));
        assert_eq!(action_angle(-1.0, 0.0).phi, Some(PI));
        assert_eq!(action_angle(-1.0, -0.0).phi, Some(PI));
        assert_eq!(action_angle(0.0, 0.0), ActionAngle { j: 0.0, phi: None });
    }

    #[test]
    fn action_drift_matches_cartesian_flow() {
        let p = HopfParams::new(0.7, 0.4, 0.9, 1.0).unwrap();
        for &(x, y) in &[(0.3, -0.2), (1.1, 0.5), (-0.6, 0.9)] {
            let (dx, dy) = cartesian_drift(&p, x, y);
            let j = action_angle(x, y).j;
            assert!(close(x * dx + y * dy, p.action_drift(j), 1e-14));
        }
    }

    #[test]
    fn step_examples() {
        let p = std_params(1.0);
        let jc = p.limit_cycle_action();
        assert_eq!(action_sde_step(&p, jc, 0.01, 0.0), jc);
        // subcritical drift so that drift·dt = −0.05 at j = 0.01
        let q = HopfParams::new(1.0, -10.0, 0.5, 1.0).unwrap();
        let dt = -0.05 / q.action_drift(0.01);
        assert!(close(action_sde_step(&q, 0.01, dt, 0.0), 0.04, 1e-12));
    }

    #[test]
    fn step_variance_is_two_d_dt() {
        let p = HopfParams::new(1.0, 0.5, 0.5, 0.3).unwrap();
        let (dt, j0) = (0.01, 5.0);
        let mut rng = trajectory_rng(11, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| action_sde_step(&p, j0, dt, dt.sqrt() * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = 2.0 * 0.3 * dt;
        assert!((var / want - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn density_is_normalized_with_expected_extrema() {
        let p = std_params(1.0);
        let d = ActionDensity::new(p).unwrap();
        let mass = d.probability(0.0, d.support_end());
        assert!((mass - 1.0).abs() < 1e-8);
        let jc = p.limit_cycle_action();
        let h = 1e-5;
        let slope = (d.log_density(jc + h) - d.log_density(jc - h)) / (2.0 * h);
        assert!(slope.abs() < 1e-8);
        assert!(d.density(jc) > d.density(jc * 0.9) && d.density(jc) > d.density(jc * 1.1));
        assert!(d.density(0.0) < d.density(1e-3));
        let ratio = d.density(jc) / d.density(0.0);
        assert!(close(ratio, (1.0f64 / 24.0).exp(), 1e-12));
        assert!(close(extremum_ratio(&p).unwrap(), ratio, 1e-10));
    }

    #[test]
    fn extremum_ratio_examples() {
        let near = HopfParams::new(1.0, 1e-6, 0.5, 1.0).unwrap();
        assert!((extremum_ratio(&near).unwrap() - 1.0).abs() < 1e-15);
        // ε³ = 12 D c²
        let p = HopfParams::new(1.0, 3.0, 1.5, 27.0 / (12.0 * 2.25)).unwrap();
        assert!(close(extremum_ratio(&p).unwrap(), std::f64::consts::E, 1e-14));
    }

    #[test]
    fn histogram_l1_and_csv() {
        let samples = [0.1, 0.3, 0.35, 0.9, 1.5];
        let h = Histogram::build(&samples, 0.0, 1.0, 2, |a, b| b - a);
        assert_eq!(h.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![3, 1]);
        assert_eq!(h.outside, 1);
        assert_eq!(h.model_outside, 0.0);
        assert!(close(h.l1_distance(), 0.1 + 0.3 + 0.2, 1e-15));
        assert_eq!(h.to_csv(), "bin_left,bin_right,count,model_density\n0,0.5,3,1\n0.5,1,1,1\n");
    }

    #[test]
    fn noise_off_limit_concentrates_on_cycle() {
        let p = std_params(1e-6);
        let cfg = HopfRunConfig { j0: Some(0.05), ..HopfRunConfig::standard(&p, 2, 0.01, 100, 4) };
        let s = simulate_action(&p, &cfg).unwrap();
        let jc = p.limit_cycle_action();
        assert!(s.j.iter().all(|j| (j - jc).abs() < 0.01), "{:?}", &s.j[..5]);
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = std_params(0.2);
        let cfg = HopfRunConfig::standard(&p, 4, 0.01, 50, 9);
        let a = simulate_action(&p, &HopfRunConfig { t_final: 100.0, threads: Some(1), ..cfg.clone() }).unwrap();
        let b = simulate_action(&p, &HopfRunConfig { t_final: 100.0, threads: Some(3), ..cfg }).unwrap();
        assert_eq!(a, b);
        assert!(a.phi.iter().all(|&f| f > -PI && f <= PI));
    }
}
