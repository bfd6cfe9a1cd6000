//! Classical phase-space dynamics under continuous measurement.

pub mod composite;
pub mod dsl;
pub mod hopf;
pub mod linear;
pub mod phase;
pub mod quadrature;
pub mod sde;
