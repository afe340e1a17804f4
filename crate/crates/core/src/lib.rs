//! Monte Carlo simulation and analytics for adaptive dyne phase measurements.
//!
//! The crate is split the same way the physics is:
//!
//! * [`squeezed`] holds squeezed-state algebra, the `(A, B) -> (alpha, xi, zeta)`
//!   mapping and the closed-form variance limits.
//! * [`sde`] integrates a single conditioned trajectory in scaled time `v`.
//! * [`policy`] implements the local-oscillator feedback laws.
//! * [`stats`] turns ensembles of outcomes into circular statistics, squeeze
//!   scatter diagnostics and power-law fits.
//! * [`ensemble`] runs many trajectories in parallel with results committed by
//!   trajectory index, so output never depends on the worker count.

pub mod ensemble;
pub mod error;
pub mod policy;
pub mod sde;
pub mod squeezed;
pub mod stats;

pub use num_complex::Complex64;

pub use ensemble::{run_ensemble, EnsembleConfig, PhaseMode, TrajectoryResult};
pub use error::{Error, Result};
pub use policy::FeedbackPolicy;
pub use sde::{DyneRecord, SystemState, TimeGrid, TrajectoryOutcome};
pub use squeezed::{LinearFormParams, SqueezedState, ZetaDecomposition};
pub use stats::{EnsembleStats, FitResult, ZetaScatter};
