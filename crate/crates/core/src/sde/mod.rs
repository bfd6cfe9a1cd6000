//! Stochastic simulation of measured systems and moment estimation.

mod ensemble;
mod fit;
mod report;
mod step;
mod system;

use thiserror::Error;

pub use ensemble::{psd_factor, simulate_ensemble, trajectory_rng, EnsembleConfig, InitialCondition};
pub use fit::{estimate_relaxation_rate, RelaxationFit, MIN_R_SQUARED};
pub use report::{MomentReport, MomentSnapshot};
pub use step::{euler_maruyama_ito_step, heun_stratonovich_step, Scheme, Stepper};
pub use system::{Drift, SdeSystem};


#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    #[error("invalid ensemble configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("trajectory {trajectory} left the finite range at t = {time}")]
    Blowup { trajectory: usize, time: f64 },
    #[error("relaxation fit: {0}")]
    Fit(String),
}
