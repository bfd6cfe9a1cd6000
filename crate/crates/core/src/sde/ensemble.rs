//! Monte-Carlo ensembles with deterministic, schedule-independent results.
//!
//! Trajectory `i` draws every random number from a ChaCha stream keyed by
//! `(seed, i)`, and the reduction into moments walks trajectories in index
//! order, so the report does not depend on how many threads ran the work.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{MomentReport, MomentSnapshot};
use super::step::{Scheme, Stepper};
use super::{SdeError, SdeSystem};
use crate::phase::PhasePoint;

/// Counter-based generator for trajectory `index` of a run seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub record_times: Vec<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Keep the state of every trajectory at the last record time.
    #[serde(default)]
    pub keep_final_samples: bool,
}

impl EnsembleConfig {
    pub fn new(n_traj: usize, dt: f64, t_final: f64, seed: u64, record_times: Vec<f64>) -> Self {
        Self {
            n_traj,
            dt,
            t_final,
            seed,
            record_times,
            scheme: Scheme::default(),
            threads: None,
            keep_final_samples: false,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }

    pub fn with_final_samples(mut self) -> Self {
        self.keep_final_samples = true;
        self
    }

    /// Evenly spaced record times `0, t_final/n, ..., t_final`.
    pub fn uniform_times(t_final: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| t_final * i as f64 / n as f64).collect()
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        let bad = |msg: String| Err(SdeError::Config(msg));
        if self.n_traj == 0 {
            return bad("n_traj must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        if self.dt > self.t_final {
            return bad(format!("dt = {} exceeds t_final = {}", self.dt, self.t_final));
        }
        if self.record_times.is_empty() {
            return bad("record_times must not be empty".into());
        }
        for w in self.record_times.windows(2) {
            if !(w[1] > w[0]) {
                return bad(format!("record_times must be strictly increasing ({} then {})", w[0], w[1]));
            }
        }
        let (first, last) = (self.record_times[0], *self.record_times.last().unwrap());
        if first < 0.0 || last > self.t_final * (1.0 + 1e-12) {
            return bad(format!("record_times must lie in [0, {}]", self.t_final));
        }
        let idx = self.record_steps();
        if idx.windows(2).any(|w| w[0] == w[1]) {
            return bad("two record times fall on the same step; refine dt".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        Ok(())
    }

    fn record_steps(&self) -> Vec<usize> {
        self.record_times.iter().map(|t| (t / self.dt).round() as usize).collect()
    }
}

/// How the initial state of each trajectory is drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Point(PhasePoint),
    Gaussian { mean: Vec<f64>, cov: DMatrix<f64> },
}

/// Precomputed sampler: `x = mean + F z` with `F Fᵀ = cov`.
#[derive(Debug, Clone)]
pub(crate) struct InitSampler {
    mean: Vec<f64>,
    factor: Option<DMatrix<f64>>,
}

impl InitSampler {
    pub(crate) fn new(init: &InitialCondition, dim: usize) -> Result<Self, SdeError> {
        match init {
            InitialCondition::Point(p) => {
                if p.dim() != dim {
                    return Err(SdeError::Dimension(format!("initial point has dimension {}, expected {dim}", p.dim())));
                }
                Ok(Self { mean: p.coords().to_vec(), factor: None })
            }
            InitialCondition::Gaussian { mean, cov } => {
                if mean.len() != dim || cov.nrows() != dim || cov.ncols() != dim {
                    return Err(SdeError::Dimension(format!("Gaussian initial condition must have dimension {dim}")));
                }
                Ok(Self { mean: mean.clone(), factor: Some(psd_factor(cov)?) })
            }
        }
    }

    pub(crate) fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out.copy_from_slice(&self.mean);
        if let Some(f) = &self.factor {
            let z: Vec<f64> = (0..out.len()).map(|_| rng.sample(StandardNormal)).collect();
            for (i, o) in out.iter_mut().enumerate() {
                *o += (0..z.len()).map(|k| f[(i, k)] * z[k]).sum::<f64>();
            }
        }
    }
}

/// Square-root factor of a symmetric PSD matrix; tolerates singular covariances.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, SdeError> {
    let n = cov.nrows();
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for k in 0..i {
            if (cov[(i, k)] - cov[(k, i)]).abs() > 1e-12 * scale {
                return Err(SdeError::Config("covariance must be symmetric".into()));
            }
        }
    }
    let eig = cov.clone().symmetric_eigen();
    let mut f = eig.eigenvectors.clone();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-10 * scale {
            return Err(SdeError::Config(format!("covariance is not positive semidefinite (eigenvalue {lambda})")));
        }
        let s = lambda.max(0.0).sqrt();
        for i in 0..n {
            f[(i, k)] *= s;
        }
    }
    Ok(f)
}

/// Runs `config.n_traj` trajectories and reduces them into moments at the
/// record times.
pub fn simulate_ensemble(
    system: &SdeSystem,
    init: &InitialCondition,
    config: &EnsembleConfig,
) -> Result<MomentReport, SdeError> {
    config.validate()?;
    let sampler = InitSampler::new(init, system.dim())?;
    let record_steps = config.record_steps();
    let run = || -> Vec<Result<Vec<f64>, SdeError>> {
        (0..config.n_traj)
            .into_par_iter()
            .map(|i| run_trajectory(system, &sampler, config, &record_steps, i))
            .collect()
    };
    let results = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SdeError::Config(format!("cannot build thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut paths = Vec::with_capacity(results.len());
    for r in results {
        paths.push(r?);
    }
    Ok(reduce(system.dim(), config, &paths))
}

fn run_trajectory(
    system: &SdeSystem,
    sampler: &InitSampler,
    config: &EnsembleConfig,
    record_steps: &[usize],
    index: usize,
) -> Result<Vec<f64>, SdeError> {
    let dim = system.dim();
    let mut rng = trajectory_rng(config.seed, index as u64);
    let mut x = vec![0.0; dim];
    sampler.sample(&mut rng, &mut x);
    let mut stepper = Stepper::new(config.scheme, dim);
    let mut out = Vec::with_capacity(record_steps.len() * dim);
    let noisy = system.is_noisy();
    let sqrt_dt = config.dt.sqrt();
    let mut next = 0;
    if record_steps[0] == 0 {
        out.extend_from_slice(&x);
        next = 1;
    }
    let n_steps = *record_steps.last().unwrap();
    for step in 1..=n_steps {
        let dw = if noisy { sqrt_dt * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        stepper.step(system, &mut x, config.dt, dw);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SdeError::Blowup { trajectory: index, time: step as f64 * config.dt });
        }
        if step == record_steps[next] {
            out.extend_from_slice(&x);
            next += 1;
        }
    }
    Ok(out)
}

fn reduce(dim: usize, config: &EnsembleConfig, paths: &[Vec<f64>]) -> MomentReport {
    let n = paths.len();
    let nf = n as f64;
    let dof = (n.saturating_sub(1)).max(1) as f64;
    let mut snapshots = Vec::with_capacity(config.record_times.len());
    for (r, &t) in config.record_times.iter().enumerate() {
        let state = |p: &Vec<f64>, i: usize| p[r * dim + i];
        let mean: Vec<f64> = (0..dim).map(|i| paths.iter().map(|p| state(p, i)).sum::<f64>() / nf).collect();
        let mean_stderr: Vec<f64> = (0..dim)
            .map(|i| {
                let ss: f64 = paths.iter().map(|p| (state(p, i) - mean[i]).powi(2)).sum();
                (ss / dof / nf).sqrt()
            })
            .collect();
        let mut raw = vec![vec![0.0; dim]; dim];
        let mut raw_se = vec![vec![0.0; dim]; dim];
        let mut cov = vec![vec![0.0; dim]; dim];
        let mut cov_se = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            for k in i..dim {
                let m = paths.iter().map(|p| state(p, i) * state(p, k)).sum::<f64>() / nf;
                let m_ss: f64 = paths.iter().map(|p| (state(p, i) * state(p, k) - m).powi(2)).sum();
                let centered = |p: &Vec<f64>| (state(p, i) - mean[i]) * (state(p, k) - mean[k]);
                let c_sum: f64 = paths.iter().map(centered).sum();
                let c_mean = c_sum / nf;
                let c_ss: f64 = paths.iter().map(|p| (centered(p) - c_mean).powi(2)).sum();
                let c = c_sum / dof;
                let values = [
                    (&mut raw, m),
                    (&mut raw_se, (m_ss / dof / nf).sqrt()),
                    (&mut cov, c),
                    (&mut cov_se, (c_ss / dof / nf).sqrt()),
                ];
                for (target, v) in values {
                    target[i][k] = v;
                    target[k][i] = v;
                }
            }
        }
        snapshots.push(MomentSnapshot {
            t,
            mean,
            mean_stderr,
            second_moment: raw,
            second_moment_stderr: raw_se,
            covariance: cov,
            covariance_stderr: cov_se,
        });
    }
    let final_samples = config.keep_final_samples.then(|| {
        let last = config.record_times.len() - 1;
        paths.iter().map(|p| p[last * dim..(last + 1) * dim].to_vec()).collect()
    });
    MomentReport { dim, n_traj: n, snapshots, final_samples }
}
