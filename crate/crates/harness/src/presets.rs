//! Canned experiments with pinned targets. Each preset returns a report of
//! individual checks; `reproduce` exits nonzero when any check fails.

use std::fmt;
use std::path::{Path, PathBuf};

use phasefeed_core::ensemble::par_map_indexed;
use phasefeed_core::sde::{run_trajectory_observed, SeedPath};
use phasefeed_core::squeezed::{make_optimal_squeezed, markii_efficiency_crossover};
use phasefeed_core::{FeedbackPolicy, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::config::{DvSetting, SimConfig, StateKind, VERSION};
use crate::error::{HarnessError, Result};
use crate::simulate::{simulate, write_outputs, Summary};
use crate::sweep::{fit_rows, run_sweep, EpsilonSearch, FitQuantity, SweepSpec};

/// Seed used by every preset unless overridden.
pub const PRESET_SEED: u64 = 1;

/// Photon-number grid shared by the scaling and near-limit sweeps.
pub const SWEEP_GRID: [f64; 5] = [100.0, 316.22776601683796, 1000.0, 3162.2776601683795, 10_000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub measured: f64,
    pub stderr: Option<f64>,
    pub low: f64,
    pub high: f64,
    pub passed: bool,
}

impl Check {
    pub fn within(label: impl Into<String>, measured: f64, stderr: Option<f64>, low: f64, high: f64) -> Self {
        Self {
            label: label.into(),
            measured,
            stderr,
            low,
            high,
            passed: measured >= low && measured <= high,
        }
    }

    /// `target` within a relative tolerance.
    pub fn relative(label: impl Into<String>, measured: f64, stderr: Option<f64>, target: f64, rel: f64) -> Self {
        let half = rel * target.abs();
        Self::within(label, measured, stderr, target - half, target + half)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {:.5e}", self.label, self.measured)?;
        if let Some(se) = self.stderr {
            write!(f, " +- {se:.2e}")?;
        }
        write!(f, " in [{:.5e}, {:.5e}]", self.low, self.high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetReport {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub version: String,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub passed: bool,
}

impl PresetReport {
    fn new(name: &str, opts: &RunOptions, checks: Vec<Check>, notes: Vec<String>) -> Self {
        let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
        Self {
            name: name.into(),
            description: describe(name).unwrap_or_default().into(),
            seed: opts.seed,
            version: VERSION.into(),
            checks,
            notes,
            passed,
        }
    }

    /// `PASS name` or `FAIL name` followed by one line per check.
    pub fn render(&self) -> String {
        let mut s = format!("{} {}", if self.passed { "PASS" } else { "FAIL" }, self.name);
        for c in &self.checks {
            s.push_str("\n  ");
            s.push_str(&c.to_string());
        }
        for n in &self.notes {
            s.push_str("\n  note: ");
            s.push_str(n);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Worker threads (0: one per core).
    pub workers: usize,
    pub seed: u64,
    /// Replaces every trajectory count; for quick looks, not for verdicts.
    pub trajectories: Option<usize>,
    /// Where to keep per-run artifacts, if anywhere.
    pub out: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 0,
            seed: PRESET_SEED,
            trajectories: None,
            out: None,
        }
    }
}

impl RunOptions {
    fn n(&self, default: usize) -> usize {
        self.trajectories.unwrap_or(default)
    }

    fn config(&self, nbar: f64, policy: FeedbackPolicy, n: usize) -> SimConfig {
        let mut c = SimConfig::new(nbar, policy, self.n(n), self.seed);
        c.workers = self.workers;
        c
    }

    fn run(&self, cfg: &SimConfig, tag: &str) -> Result<Summary> {
        let run = simulate(cfg)?;
        if let Some(dir) = &self.out {
            write_outputs(&run, &dir.join(tag))?;
        }
        Ok(run.summary)
    }
}

const PRESETS: &[(&str, &str)] = &[
    ("markii-total", "mark II on optimal squeezed inputs at nbar 100, 400, 1600: total = mark II introduced + intrinsic"),
    ("heterodyne-baseline", "heterodyne on a coherent nbar = 100 input: total = 1/(4 nbar) + 1/(4 nbar)"),
    ("abs-a-identity", "mark I and mark II: ensemble mean of |A_v|^2 equals v at v = 0.25, 0.5, 1"),
    ("n1577", "time-dependent epsilon at nbar = 1577 on the photon-number time step: 1.54e-6"),
    ("n1577-fine100", "as n1577 with the feedback interval divided by 100: 1.93e-6"),
    ("n1577-fine1000", "as n1577 with the feedback interval divided by 1000: 2.13e-6"),
    ("constant-eps-scaling", "constant epsilon optimised per point over nbar 1e2..1e4: fitted introduced-variance exponent in [1.55, 1.80]"),
    ("near-limit", "time-dependent epsilon over nbar 1e2..1e4: variance within 15% of twice the intrinsic variance"),
    ("zeta-bias", "uncorrected time-dependent epsilon at nbar = 1e4: most final squeeze estimates lie below the optimum"),
    ("corrected-excess", "corrected feedback (lambda = 1e-3) at nbar = 1e4: both squeeze-error excess ratios below 5%"),
    ("crossover-eta98", "photon number where mark II drops below the 98%-efficiency floor lies in [400, 1500]"),
    ("determinism", "n1577 with 1, 4 and 8 workers produces byte-identical outputs"),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

pub fn describe(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}

pub fn run_preset(name: &str, opts: &RunOptions) -> Result<PresetReport> {
    let (checks, notes) = match name {
        "markii-total" => markii_total(opts)?,
        "heterodyne-baseline" => heterodyne_baseline(opts)?,
        "abs-a-identity" => abs_a_identity(opts)?,
        "n1577" => n1577(opts, 1.0, 20_000, 1.54e-6, 0.10)?,
        "n1577-fine100" => n1577(opts, 100.0, 5_000, 1.93e-6, 0.12)?,
        "n1577-fine1000" => n1577(opts, 1000.0, 2_000, 2.13e-6, 0.15)?,
        "constant-eps-scaling" => constant_eps_scaling(opts)?,
        "near-limit" => near_limit(opts)?,
        "zeta-bias" => zeta_bias(opts)?,
        "corrected-excess" => corrected_excess(opts)?,
        "crossover-eta98" => crossover(),
        "determinism" => determinism(opts)?,
        other => {
            return Err(HarnessError::Usage(format!(
                "unknown preset {other:?}; available: {}",
                names().join(", ")
            )))
        }
    };
    Ok(PresetReport::new(name, opts, checks, notes))
}

type Outcome = (Vec<Check>, Vec<String>);

fn wrapped_note(label: &str, s: &Summary) -> String {
    format!(
        "{label}: wrapped variance {:.4e}, {} of {} trajectories failed",
        s.stats.wrapped_variance, s.stats.failed_count, s.config.n_trajectories
    )
}

fn markii_total(opts: &RunOptions) -> Result<Outcome> {
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for nbar in [100.0, 400.0, 1600.0] {
        let cfg = opts.config(nbar, FeedbackPolicy::MarkII, 50_000);
        let s = opts.run(&cfg, &format!("markii-{nbar}"))?;
        let target = s.reference.markii_introduced + s.reference.intrinsic_var;
        let se = s.stats.stderr_holevo;
        let half = (3.0 * se.unwrap_or(0.0)).max(0.10 * target);
        checks.push(Check::within(
            format!("mark II total variance at nbar {nbar}"),
            s.stats.holevo_variance,
            se,
            target - half,
            target + half,
        ));
        notes.push(wrapped_note(&format!("nbar {nbar}"), &s));
    }
    Ok((checks, notes))
}

fn heterodyne_baseline(opts: &RunOptions) -> Result<Outcome> {
    let nbar = 100.0;
    let mut cfg = opts.config(nbar, FeedbackPolicy::heterodyne(), 50_000);
    cfg.state = StateKind::Coherent;
    let s = opts.run(&cfg, "heterodyne")?;
    let target = 0.25 / nbar + 0.25 / nbar;
    let check = Check::relative(
        "heterodyne total variance at nbar 100",
        s.stats.holevo_variance,
        s.stats.stderr_holevo,
        target,
        0.10,
    );
    Ok((vec![check], vec![wrapped_note("nbar 100", &s)]))
}

/// `|A_v|^2` sampled where the record first reaches each of `times`.
fn abs_a_samples(policy: FeedbackPolicy, times: &[f64], n: usize, opts: &RunOptions) -> Result<Vec<Vec<f64>>> {
    let initial = make_optimal_squeezed(100.0)?;
    let grid = TimeGrid::new(1e-4, 1, 1.0)?;
    let per_traj = par_map_indexed(n as u64, opts.workers, |index| {
        let seed_path = SeedPath {
            master_seed: opts.seed,
            index,
        };
        let mut got = vec![f64::NAN; times.len()];
        run_trajectory_observed(&initial, 0.0, &policy, &grid, seed_path, |view| {
            for (slot, &t) in got.iter_mut().zip(times) {
                if slot.is_nan() && view.record.v >= t - 1e-9 {
                    *slot = view.record.a.norm_sqr();
                }
            }
        })
        .map(|_| got)
    })?;
    let mut by_time = vec![Vec::with_capacity(n); times.len()];
    for r in per_traj {
        for (col, x) in by_time.iter_mut().zip(r?) {
            col.push(x);
        }
    }
    Ok(by_time)
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn abs_a_identity(opts: &RunOptions) -> Result<Outcome> {
    let times = [0.25, 0.5, 1.0];
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for policy in [FeedbackPolicy::MarkI, FeedbackPolicy::MarkII] {
        let samples = abs_a_samples(policy, &times, opts.n(10_000), opts)?;
        for (t, xs) in times.iter().zip(&samples) {
            let (mean, se) = mean_and_stderr(xs);
            checks.push(Check::within(
                format!("{} mean |A|^2 at v = {t}", policy.name()),
                mean,
                Some(se),
                t - 3.0 * se,
                t + 3.0 * se,
            ));
        }
        let (_, se1) = mean_and_stderr(&samples[2]);
        let sd1 = se1 * (samples[2].len() as f64).sqrt();
        notes.push(format!(
            "{}: sd of |A_1|^2 = {sd1:.4e}, sqrt(2 dv) = {:.4e}",
            policy.name(),
            (2.0f64 * 1e-4).sqrt()
        ));
    }
    Ok((checks, notes))
}

fn n1577(opts: &RunOptions, refine: f64, n: usize, target: f64, rel: f64) -> Result<Outcome> {
    let mut cfg = opts.config(1577.0, FeedbackPolicy::time_epsilon(1.0), n);
    cfg.dv_feedback = DvSetting::PaperRule { refine };
    let s = opts.run(&cfg, &format!("n1577-div{refine}"))?;
    let check = Check::relative(
        format!("time-eps variance at nbar 1577, interval / {refine}"),
        s.stats.holevo_variance,
        s.stats.stderr_holevo,
        target,
        rel,
    );
    let worst = s.stats.wrapped_variance.sqrt();
    Ok((
        vec![check],
        vec![
            wrapped_note("nbar 1577", &s),
            format!("rms wrapped error {worst:.4e}, dv {:.4e}, {} steps", s.grid.dv_feedback, s.grid.total_steps),
        ],
    ))
}

fn sweep_spec(opts: &RunOptions, policy: FeedbackPolicy, n: usize) -> SweepSpec {
    SweepSpec {
        base: opts.config(0.0, policy, n),
        nbar_grid: SWEEP_GRID.to_vec(),
        overrides: Vec::new(),
        epsilon_search: None,
    }
}

fn sweep_notes(rows: &[crate::sweep::SweepRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            format!(
                "nbar {:.1}: {} total {:.4e} introduced {:.4e} ratio {:.4} ({})",
                r.nbar, r.params, r.holevo_var, r.introduced_var, r.ratio_to_limit, r.status
            )
        })
        .collect()
}

fn constant_eps_scaling(opts: &RunOptions) -> Result<Outcome> {
    let mut spec = sweep_spec(opts, FeedbackPolicy::ConstantEpsilon { epsilon: 0.5 }, 2_000);
    spec.epsilon_search = Some(EpsilonSearch::default());
    let rows = run_sweep(&spec)?;
    let notes = sweep_notes(&rows);
    let fit = fit_rows(&rows, FitQuantity::Introduced)?;
    let check = Check::within(
        "constant-eps introduced-variance exponent",
        fit.exponent,
        Some(fit.exponent_stderr),
        1.55,
        1.80,
    );
    Ok((vec![check], notes))
}

fn near_limit(opts: &RunOptions) -> Result<Outcome> {
    let rows = run_sweep(&sweep_spec(opts, FeedbackPolicy::time_epsilon(1.0), 4_000))?;
    let checks = rows
        .iter()
        .map(|r| {
            let se = r.holevo_stderr.map(|s| s / (2.0 * r.intrinsic_var));
            Check::within(format!("time-eps ratio to limit at nbar {:.1}", r.nbar), r.ratio_to_limit, se, 0.0, 1.15)
        })
        .collect();
    Ok((checks, sweep_notes(&rows)))
}

fn zeta_bias(opts: &RunOptions) -> Result<Outcome> {
    let cfg = opts.config(10_000.0, FeedbackPolicy::time_epsilon(1.0), 2_000);
    let s = opts.run(&cfg, "zeta-bias")?;
    let z = &s.zeta;
    let check = Check::within(
        "share of Re zeta below the optimum at nbar 1e4",
        z.fraction_below,
        None,
        0.5f64.next_up(),
        1.0,
    );
    Ok((
        vec![check],
        vec![format!(
            "{} points, {} skipped, rms |zeta| deviation {:.4e}",
            z.points, z.skipped, z.rms_dev_modulus
        )],
    ))
}

fn corrected_excess(opts: &RunOptions) -> Result<Outcome> {
    let cfg = opts.config(10_000.0, FeedbackPolicy::corrected(1e-3, 1.0), 2_000);
    let s = opts.run(&cfg, "corrected")?;
    let z = &s.zeta;
    let below = 0.05f64.next_down();
    let checks = vec![
        Check::within("excess from |zeta| error at nbar 1e4", z.excess_modulus.unwrap_or(f64::NAN), None, 0.0, below),
        Check::within("excess from arg zeta error at nbar 1e4", z.excess_phase.unwrap_or(f64::NAN), None, 0.0, below),
    ];
    Ok((
        checks,
        vec![
            format!(
                "rms |zeta| deviation {:.4e}, rms arg deviation {:.4e}, share below optimum {:.3}",
                z.rms_dev_modulus, z.rms_dev_phase, z.fraction_below
            ),
            format!(
                "total {:.4e}, ratio to limit {:.4}",
                s.stats.holevo_variance, s.reference.ratio_to_limit
            ),
        ],
    ))
}

fn crossover() -> Outcome {
    let x = markii_efficiency_crossover(0.98, 10.0, 1e6).unwrap_or(f64::NAN);
    (
        vec![Check::within("mark II / 98% efficiency crossover", x, None, 400.0, 1500.0)],
        Vec::new(),
    )
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

fn determinism(opts: &RunOptions) -> Result<Outcome> {
    let root = match &opts.out {
        Some(d) => d.join("determinism"),
        None => std::env::temp_dir().join(format!("phasefeed-determinism-{}", std::process::id())),
    };
    let mut outputs = Vec::new();
    for workers in [1usize, 4, 8] {
        let mut cfg = opts.config(1577.0, FeedbackPolicy::time_epsilon(1.0), 20_000);
        cfg.workers = workers;
        let dir = root.join(format!("workers-{workers}"));
        write_outputs(&simulate(&cfg)?, &dir)?;
        outputs.push((read(&dir.join("trajectories.csv"))?, read(&dir.join("summary.json"))?));
    }
    if opts.out.is_none() {
        let _ = std::fs::remove_dir_all(&root);
    }
    let mut checks = Vec::new();
    for (k, w) in [(1usize, 4usize), (2, 8)] {
        let same_csv = outputs[k].0 == outputs[0].0;
        let same_json = outputs[k].1 == outputs[0].1;
        checks.push(Check::within(
            format!("trajectories.csv and summary.json identical for 1 and {w} workers"),
            f64::from(u8::from(same_csv && same_json)),
            None,
            1.0,
            1.0,
        ));
    }
    Ok((checks, vec![format!("{} CSV bytes", outputs[0].0.len())]))
}
