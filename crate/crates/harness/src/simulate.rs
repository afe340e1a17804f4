//! Single-configuration runs and their on-disk artifacts.

use std::fs;
use std::io::Write;
use std::path::Path;

use phasefeed_core::ensemble::{run_ensemble, successes, summarize, true_phase_for};
use phasefeed_core::sde::{run_trajectory_observed, SeedPath};
use phasefeed_core::squeezed::{heterodyne_introduced, markII_introduced, theoretical_limit};
use phasefeed_core::stats::{scatter_excess, zeta_scatter};
use phasefeed_core::{EnsembleStats, TrajectoryResult};
use serde::{Deserialize, Serialize};

use crate::config::{Provenance, SimConfig};
use crate::error::{invalid, HarnessError, Result};

/// Largest tolerated share of failed trajectories.
pub const MAX_FAILED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub dv_feedback: f64,
    pub substeps: usize,
    pub total_steps: usize,
}

/// Closed-form reference values for the run's input state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub nbar: f64,
    pub input_n0: f64,
    pub intrinsic_var: f64,
    pub theoretical_limit: f64,
    pub markii_introduced: f64,
    pub heterodyne_introduced: f64,
    /// Holevo variance minus the intrinsic variance.
    pub introduced_var: f64,
    /// Holevo variance over twice the intrinsic variance.
    pub ratio_to_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaSummary {
    pub nbar: f64,
    pub points: usize,
    pub skipped: usize,
    pub fraction_below: f64,
    pub rms_dev_modulus: f64,
    pub rms_dev_phase: f64,
    pub excess_modulus: Option<f64>,
    pub excess_phase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub index: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub provenance: Provenance,
    pub config: SimConfig,
    pub grid: GridInfo,
    pub stats: EnsembleStats,
    pub reference: Reference,
    pub zeta: ZetaSummary,
    pub failures: Vec<FailureRecord>,
}

pub struct SimulationRun {
    pub summary: Summary,
    pub results: Vec<TrajectoryResult>,
}

pub fn reference_for(cfg: &SimConfig, holevo: f64) -> Result<Reference> {
    let nbar = cfg.effective_nbar()?;
    let intrinsic = cfg.intrinsic_variance()?;
    Ok(Reference {
        nbar,
        input_n0: cfg.input_n0()?,
        intrinsic_var: intrinsic,
        theoretical_limit: theoretical_limit(nbar)?,
        markii_introduced: markII_introduced(nbar)?,
        heterodyne_introduced: heterodyne_introduced(nbar)?,
        introduced_var: holevo - intrinsic,
        ratio_to_limit: holevo / (2.0 * intrinsic),
    })
}

pub fn zeta_summary(scatter: &phasefeed_core::ZetaScatter, nbar: f64) -> ZetaSummary {
    let excess = scatter_excess(scatter, nbar).ok();
    ZetaSummary {
        nbar,
        points: scatter.points.len(),
        skipped: scatter.skipped,
        fraction_below: scatter.fraction_below,
        rms_dev_modulus: scatter.rms_dev_modulus,
        rms_dev_phase: scatter.rms_dev_phase,
        excess_modulus: excess.map(|e| e.0),
        excess_phase: excess.map(|e| e.1),
    }
}

/// Runs the ensemble described by `cfg`. More than 1% failed trajectories is
/// an error; fewer are counted in the statistics.
pub fn simulate(cfg: &SimConfig) -> Result<SimulationRun> {
    let ens = cfg.ensemble()?;
    let results = run_ensemble(&ens)?;
    let failures: Vec<FailureRecord> = results
        .iter()
        .filter_map(|r| r.as_ref().err())
        .map(|f| FailureRecord {
            index: f.index,
            error: f.error.to_string(),
        })
        .collect();
    if failures.len() as f64 > MAX_FAILED_FRACTION * results.len() as f64 {
        return Err(invalid(format!(
            "{} of {} trajectories failed (first: #{} {})",
            failures.len(),
            results.len(),
            failures[0].index,
            failures[0].error
        )));
    }
    let stats = summarize(&results)?;
    let reference = reference_for(cfg, stats.holevo_variance)?;
    let zeta = zeta_summary(&zeta_scatter(&successes(&results)), reference.nbar);
    // Recorded without worker count or output location so that those never
    // change the bytes written.
    let mut recorded = cfg.clone();
    recorded.workers = 0;
    recorded.outputs.dir = None;
    let summary = Summary {
        provenance: cfg.provenance(),
        config: recorded,
        grid: GridInfo {
            dv_feedback: ens.grid.dv_feedback,
            substeps: ens.grid.substeps,
            total_steps: ens.grid.total_steps(),
        },
        stats,
        reference,
        zeta,
        failures,
    };
    Ok(SimulationRun { summary, results })
}

/// One row of `trajectories.csv`. Failed trajectories keep their index and
/// error text with the numeric fields empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub index: u64,
    pub true_phase: Option<f64>,
    pub theta_hat: Option<f64>,
    pub wrapped_error: Option<f64>,
    pub a_re: Option<f64>,
    pub a_im: Option<f64>,
    pub b_re: Option<f64>,
    pub b_im: Option<f64>,
    pub nbar_est: Option<f64>,
    pub zeta_re: Option<f64>,
    pub zeta_im: Option<f64>,
    pub n0: Option<f64>,
    pub error: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

pub fn trajectory_rows(results: &[TrajectoryResult], prov: &Provenance) -> Vec<TrajectoryRow> {
    results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = TrajectoryRow {
                index: i as u64,
                true_phase: None,
                theta_hat: None,
                wrapped_error: None,
                a_re: None,
                a_im: None,
                b_re: None,
                b_im: None,
                nbar_est: None,
                zeta_re: None,
                zeta_im: None,
                n0: None,
                error: String::new(),
                config_hash: prov.config_hash.clone(),
                seed: prov.seed,
                version: prov.version.clone(),
            };
            match r {
                Ok(o) => {
                    row.true_phase = Some(o.true_phase);
                    row.theta_hat = Some(o.theta_hat);
                    row.wrapped_error = Some(o.wrapped_error);
                    row.a_re = Some(o.final_record.a.re);
                    row.a_im = Some(o.final_record.a.im);
                    row.b_re = Some(o.final_record.b.re);
                    row.b_im = Some(o.final_record.b.im);
                    if let Some(z) = o.zeta_diag {
                        row.nbar_est = Some(z.nbar_est);
                        row.zeta_re = Some(z.zeta.re);
                        row.zeta_im = Some(z.zeta.im);
                        row.n0 = Some(z.n0);
                    }
                }
                Err(f) => row.error = f.error.to_string(),
            }
            row
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::format(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| HarnessError::format(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::format(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::format(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Re-runs the first `count` trajectories with a step observer and writes one
/// `index step v phi |A| |B| arg(C)` line per integration step.
pub fn write_trace(cfg: &SimConfig, count: usize, path: &Path) -> Result<()> {
    let ens = cfg.ensemble()?;
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut io_err = None;
    for index in 0..count.min(cfg.n_trajectories) as u64 {
        let seed_path = SeedPath {
            master_seed: cfg.master_seed,
            index,
        };
        let phase = true_phase_for(cfg.true_phase_mode, seed_path);
        let _ = run_trajectory_observed(&ens.initial, phase, &ens.policy, &ens.grid, seed_path, |view| {
            if io_err.is_none() {
                if let Err(e) = writeln!(out, "{index} {} {}", view.step, view.trace_line()) {
                    io_err = Some(e);
                }
            }
        });
    }
    if let Some(e) = io_err {
        return Err(HarnessError::io(path, e));
    }
    out.flush().map_err(|e| HarnessError::io(path, e))
}

/// Writes `summary.json`, and `trajectories.csv` / `trace.txt` when enabled.
pub fn write_outputs(run: &SimulationRun, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&dir.join("summary.json"), &run.summary)?;
    let cfg = &run.summary.config;
    if cfg.outputs.trajectories_csv {
        let rows = trajectory_rows(&run.results, &run.summary.provenance);
        write_csv(&dir.join("trajectories.csv"), &rows)?;
    }
    if cfg.outputs.trace > 0 {
        write_trace(cfg, cfg.outputs.trace, &dir.join("trace.txt"))?;
    }
    Ok(())
}
