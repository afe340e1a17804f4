//! Parallel trajectory ensembles.
//!
//! Each trajectory draws its noise from a stream keyed by `(master_seed, index)`
//! and its result is stored at position `index`, so the output is the same for
//! any number of workers.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::FeedbackPolicy;
use crate::sde::{run_trajectory, SeedPath, TimeGrid, TrajectoryOutcome};
use crate::squeezed::SqueezedState;
use crate::stats::EnsembleStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    /// True phase 0 for every trajectory.
    #[default]
    Zero,
    /// True phase uniform on `(-pi, pi]`, drawn from the trajectory's aux stream.
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub initial: SqueezedState,
    pub policy: FeedbackPolicy,
    pub grid: TimeGrid,
    pub n_trajectories: usize,
    pub master_seed: u64,
    pub phase_mode: PhaseMode,
    /// Worker threads; `0` lets rayon decide.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFailure {
    pub index: u64,
    pub error: Error,
}

pub type TrajectoryResult = std::result::Result<TrajectoryOutcome, TrajectoryFailure>;

pub fn true_phase_for(mode: PhaseMode, seed_path: SeedPath) -> f64 {
    match mode {
        PhaseMode::Zero => 0.0,
        PhaseMode::UniformRandom => {
            let u: f64 = seed_path.aux_rng().random();
            PI - u * 2.0 * PI
        }
    }
}

fn run_one(cfg: &EnsembleConfig, index: u64) -> TrajectoryResult {
    let seed_path = SeedPath {
        master_seed: cfg.master_seed,
        index,
    };
    let phase = true_phase_for(cfg.phase_mode, seed_path);
    run_trajectory(&cfg.initial, phase, &cfg.policy, &cfg.grid, seed_path)
        .map_err(|error| TrajectoryFailure { index, error })
}

/// Runs `n_trajectories` trajectories; results are in index order.
pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<Vec<TrajectoryResult>> {
    if cfg.n_trajectories == 0 {
        return Err(Error::Invalid("n_trajectories must be >= 1".into()));
    }
    cfg.grid.validate()?;
    cfg.policy.validate()?;
    cfg.initial.validate()?;
    par_map_indexed(cfg.n_trajectories as u64, cfg.workers, |i| run_one(cfg, i))
}

/// Maps `f` over `0..n` on `workers` threads (`0`: rayon decides, `1`: the
/// calling thread). Results are in index order whatever the scheduling.
pub fn par_map_indexed<T, F>(n: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if workers == 1 {
        return Ok((0..n).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

/// Statistics over the successful trajectories, in index order.
pub fn summarize(results: &[TrajectoryResult]) -> Result<EnsembleStats> {
    let errors: Vec<f64> = results
        .iter()
        .filter_map(|r| r.as_ref().ok().map(|o| o.wrapped_error))
        .collect();
    let failed = results.len() - errors.len();
    if errors.is_empty() {
        return Err(Error::Invalid(format!("all {failed} trajectories failed")));
    }
    EnsembleStats::from_errors(&errors, failed)
}

pub fn successes(results: &[TrajectoryResult]) -> Vec<TrajectoryOutcome> {
    results.iter().filter_map(|r| r.as_ref().ok().cloned()).collect()
}
