//! Photon-number sweeps, with an optional per-point search over a constant
//! epsilon.

use std::path::Path;

use phasefeed_core::ensemble::{run_ensemble, summarize};
use phasefeed_core::stats::{power_law_fit, FitResult};
use phasefeed_core::FeedbackPolicy;
use serde::{Deserialize, Serialize};

use crate::config::{DvSetting, SimConfig};
use crate::error::{invalid, HarnessError, Result};
use crate::simulate::{reference_for, simulate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSearch {
    #[serde(default = "lo_default")]
    pub lo: f64,
    #[serde(default = "hi_default")]
    pub hi: f64,
    #[serde(default = "tol_default")]
    pub tolerance: f64,
    /// Trajectories during the search are `n_trajectories / search_reduction`.
    #[serde(default = "reduction_default")]
    pub search_reduction: usize,
}

// The optimum drops below 0.2 from nbar ~ 1e3 on, so the bracket starts at 0.
fn lo_default() -> f64 {
    0.0
}
fn hi_default() -> f64 {
    1.0
}
fn tol_default() -> f64 {
    1e-2
}
fn reduction_default() -> usize {
    4
}

impl Default for EpsilonSearch {
    fn default() -> Self {
        Self {
            lo: lo_default(),
            hi: hi_default(),
            tolerance: tol_default(),
            search_reduction: reduction_default(),
        }
    }
}

/// Settings that replace the base configuration at one grid point.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointOverride {
    pub nbar: f64,
    pub policy: Option<FeedbackPolicy>,
    pub n_trajectories: Option<usize>,
    pub dv_feedback: Option<DvSetting>,
    pub substeps: Option<usize>,
    pub master_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: SimConfig,
    pub nbar_grid: Vec<f64>,
    #[serde(default)]
    pub overrides: Vec<PointOverride>,
    /// Only used with a constant-epsilon base policy.
    #[serde(default)]
    pub epsilon_search: Option<EpsilonSearch>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::format(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.nbar_grid.is_empty() {
            return Err(invalid("nbar_grid is empty"));
        }
        if self.nbar_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("nbar_grid must be strictly increasing"));
        }
        if let Some(s) = &self.epsilon_search {
            if !(0.0 <= s.lo && s.lo < s.hi && s.hi <= 1.0 && s.tolerance > 0.0) {
                return Err(invalid(format!("bad epsilon search bracket {s:?}")));
            }
            if s.search_reduction == 0 {
                return Err(invalid("search_reduction must be >= 1"));
            }
        }
        for nbar in &self.nbar_grid {
            self.point(*nbar).validate()?;
        }
        Ok(())
    }

    /// Base config specialised to one grid point.
    pub fn point(&self, nbar: f64) -> SimConfig {
        let mut c = self.base.clone();
        c.nbar = nbar;
        if let Some(o) = self.overrides.iter().find(|o| o.nbar == nbar) {
            if let Some(p) = o.policy {
                c.policy = p;
            }
            if let Some(n) = o.n_trajectories {
                c.n_trajectories = n;
            }
            if let Some(dv) = o.dv_feedback {
                c.dv_feedback = dv;
            }
            if let Some(s) = o.substeps {
                c.substeps = s;
            }
            if let Some(s) = o.master_seed {
                c.master_seed = s;
            }
        }
        c
    }
}

/// One row of the sweep CSV. The first twelve columns are fixed; the rest are
/// reference values and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nbar: f64,
    pub policy: String,
    pub params: String,
    pub n_traj: usize,
    pub dv_feedback: f64,
    pub substeps: usize,
    pub holevo_var: f64,
    pub holevo_stderr: Option<f64>,
    pub wrapped_var: f64,
    pub mean_error: f64,
    pub failed_count: usize,
    pub ratio_to_limit: f64,
    pub intrinsic_var: f64,
    pub introduced_var: f64,
    pub status: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

/// Golden-section minimisation of `f` on `[lo, hi]` down to `tol`; returns the
/// bracket midpoint.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Picks the constant epsilon minimising the Holevo variance on a reduced
/// ensemble. All trial values share the same seed, so noise is common.
pub fn optimise_epsilon(cfg: &SimConfig, search: &EpsilonSearch) -> Result<f64> {
    let mut trial = cfg.clone();
    trial.n_trajectories = (cfg.n_trajectories / search.search_reduction).max(1);
    let mut first_err = None;
    let eps = golden_section(
        |eps| {
            trial.policy = FeedbackPolicy::ConstantEpsilon { epsilon: eps };
            match trial.ensemble().and_then(|e| Ok(summarize(&run_ensemble(&e)?)?)) {
                Ok(s) if s.holevo_variance.is_finite() => s.holevo_variance,
                Ok(_) => f64::INFINITY,
                Err(e) => {
                    first_err.get_or_insert(e);
                    f64::INFINITY
                }
            }
        },
        search.lo,
        search.hi,
        search.tolerance,
    );
    match first_err {
        Some(e) => Err(e),
        None => Ok(eps),
    }
}

fn run_point(spec: &SweepSpec, nbar: f64) -> (SimConfig, Result<SweepRow>) {
    let mut cfg = spec.point(nbar);
    if let (Some(search), FeedbackPolicy::ConstantEpsilon { .. }) = (&spec.epsilon_search, cfg.policy) {
        match optimise_epsilon(&cfg, search) {
            Ok(eps) => cfg.policy = FeedbackPolicy::ConstantEpsilon { epsilon: eps },
            Err(e) => return (cfg, Err(e)),
        }
    }
    let row = simulate(&cfg).map(|run| {
        let s = &run.summary;
        SweepRow {
            nbar,
            policy: cfg.policy.name().into(),
            params: cfg.policy.params(),
            n_traj: cfg.n_trajectories,
            dv_feedback: s.grid.dv_feedback,
            substeps: s.grid.substeps,
            holevo_var: s.stats.holevo_variance,
            holevo_stderr: s.stats.stderr_holevo,
            wrapped_var: s.stats.wrapped_variance,
            mean_error: s.stats.mean_error,
            failed_count: s.stats.failed_count,
            ratio_to_limit: s.reference.ratio_to_limit,
            intrinsic_var: s.reference.intrinsic_var,
            introduced_var: s.reference.introduced_var,
            status: "ok".into(),
            config_hash: s.provenance.config_hash.clone(),
            seed: cfg.master_seed,
            version: s.provenance.version.clone(),
        }
    });
    (cfg, row)
}

/// Runs every grid point. A failing point yields a row with `status` set to
/// the error and NaN statistics; the sweep itself carries on.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.nbar_grid.len());
    for &nbar in &spec.nbar_grid {
        let (cfg, row) = run_point(spec, nbar);
        rows.push(match row {
            Ok(r) => r,
            Err(e) => failed_row(&cfg, nbar, &e),
        });
    }
    Ok(rows)
}

fn failed_row(cfg: &SimConfig, nbar: f64, err: &HarnessError) -> SweepRow {
    let prov = cfg.provenance();
    let intrinsic = reference_for(cfg, f64::NAN).map(|r| r.intrinsic_var).unwrap_or(f64::NAN);
    SweepRow {
        nbar,
        policy: cfg.policy.name().into(),
        params: cfg.policy.params(),
        n_traj: cfg.n_trajectories,
        dv_feedback: cfg.dv().unwrap_or(f64::NAN),
        substeps: cfg.substeps,
        holevo_var: f64::NAN,
        holevo_stderr: None,
        wrapped_var: f64::NAN,
        mean_error: f64::NAN,
        failed_count: cfg.n_trajectories,
        ratio_to_limit: f64::NAN,
        intrinsic_var: intrinsic,
        introduced_var: f64::NAN,
        status: format!("error: {err}"),
        config_hash: prov.config_hash,
        seed: prov.seed,
        version: prov.version,
    }
}

/// Which sweep column a power law is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitQuantity {
    Introduced,
    Total,
}

/// Power-law fit over the successful rows with a positive target value.
pub fn fit_rows(rows: &[SweepRow], quantity: FitQuantity) -> Result<FitResult> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.status == "ok")
        .map(|r| {
            let y = match quantity {
                FitQuantity::Introduced => r.introduced_var,
                FitQuantity::Total => r.holevo_var,
            };
            (r.nbar, y)
        })
        .filter(|(_, y)| *y > 0.0 && y.is_finite())
        .collect();
    if pts.len() < 3 {
        return Err(invalid(format!(
            "power-law fit needs 3 usable rows, found {}",
            pts.len()
        )));
    }
    Ok(power_law_fit(&pts)?)
}
