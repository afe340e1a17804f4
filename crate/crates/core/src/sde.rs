//! Single-trajectory integration in scaled time `v = 1 - e^{-t}`.
//!
//! In the large local-oscillator limit the photocurrent is
//! `I dv = 2 Re(alpha_v e^{-i Phi}) dv + dW`, and a squeezed input stays squeezed.
//! The conditioned state is carried by the scaled amplitude `alpha_v` and the
//! initial squeeze `B_0^S`; `B_v^S` itself has the closed form
//! `(1 - v) / (1/B_0^S - B_v*)`, so only `alpha_v` needs a stochastic update:
//!
//! ```text
//! d alpha_v = 1/(1-v) * B_v^S / (1 - |B_v^S|^2) * ((B_v^S)* e^{i Phi} + e^{-i Phi}) dW
//! ```
//!
//! `B_v^S / (1 - v) = 1 / (1/B_0^S - B_v*)` stays finite at `v = 1`, so the run
//! goes all the way to the end of the pulse without a cutoff.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::FeedbackPolicy;
use crate::squeezed::{
    theoretical_limit, to_linear_form, zeta_from_record, SqueezedState, ZetaDecomposition,
    MAX_B_MODULUS,
};
use crate::stats::wrap_error;

/// Sufficient statistics of the photocurrent up to time `v`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DyneRecord {
    pub a: Complex64,
    pub b: Complex64,
    pub v: f64,
}

impl DyneRecord {
    /// `C_v = A_v v + B_v A_v*`.
    ///
    /// Homodyning a single quadrature makes the two terms cancel exactly; a
    /// result at the rounding level of the terms is returned as exact zero so
    /// that the `C = 0` fallbacks apply instead of reading a phase off noise.
    #[inline]
    pub fn c(&self) -> Complex64 {
        let t1 = self.a * self.v;
        let t2 = self.b * self.a.conj();
        let c = t1 + t2;
        let scale = t1.norm_sqr().max(t2.norm_sqr());
        if c.norm_sqr() <= (32.0 * f64::EPSILON).powi(2) * scale {
            Complex64::new(0.0, 0.0)
        } else {
            c
        }
    }
}

/// Conditioned system state: scaled amplitude plus the fixed initial squeeze.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub alpha_v: Complex64,
    pub b0_lin: Complex64,
    pub v: f64,
}

impl SystemState {
    pub fn from_state(state: &SqueezedState) -> Self {
        Self {
            alpha_v: state.alpha,
            b0_lin: to_linear_form(state).b_lin,
            v: 0.0,
        }
    }

    /// Instantaneous `B_v^S` for the given record.
    pub fn b_s(&self, record: &DyneRecord) -> Complex64 {
        closed_form_bs(self.b0_lin, record.b, record.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dv_feedback: f64,
    pub substeps: usize,
    pub v_end: f64,
}

impl TimeGrid {
    pub fn new(dv_feedback: f64, substeps: usize, v_end: f64) -> Result<Self> {
        let grid = Self {
            dv_feedback,
            substeps,
            v_end,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Feedback interval `nbar * limit(nbar) / 25`, one integration step each.
    pub fn paper_rule(nbar: f64) -> Result<Self> {
        Self::new(paper_rule_dv(nbar)?, 1, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dv_feedback > 0.0 && self.dv_feedback.is_finite()) {
            return Err(Error::InvalidGrid(format!("dv_feedback = {}", self.dv_feedback)));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidGrid("substeps must be >= 1".into()));
        }
        if !(self.v_end > 0.0 && self.v_end <= 1.0) {
            return Err(Error::InvalidGrid(format!("v_end = {} not in (0, 1]", self.v_end)));
        }
        let steps = self.intervals() as f64 * self.substeps as f64;
        if steps > 1e12 {
            return Err(Error::InvalidGrid(format!("{steps} steps per trajectory")));
        }
        Ok(())
    }

    pub fn intervals(&self) -> usize {
        ((self.v_end / self.dv_feedback) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn total_steps(&self) -> usize {
        self.intervals() * self.substeps
    }
}

pub fn paper_rule_dv(nbar: f64) -> Result<f64> {
    Ok(nbar * theoretical_limit(nbar)? / 25.0)
}

/// Reproducibility key: any trajectory can be regenerated from these two numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPath {
    pub master_seed: u64,
    pub index: u64,
}

impl SeedPath {
    /// Noise stream. ChaCha's 64-bit block counter indexes the step position.
    pub fn noise_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.index);
        rng
    }

    /// Independent stream for per-trajectory choices such as a random true phase.
    pub fn aux_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(self.index);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub final_record: DyneRecord,
    pub theta_hat: f64,
    pub true_phase: f64,
    pub wrapped_error: f64,
    /// `None` when the final record has no well-defined squeeze decomposition.
    pub zeta_diag: Option<ZetaDecomposition>,
    pub policy: FeedbackPolicy,
    pub seed_path: SeedPath,
}

/// One integration step as seen by an observer.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub step: usize,
    /// `e^{i Phi}` held over the current interval.
    pub rotor: Complex64,
    pub record: &'a DyneRecord,
    pub state: &'a SystemState,
}

impl StepView<'_> {
    pub fn phi(&self) -> f64 {
        self.rotor.arg()
    }

    /// `v phi |A| |B| arg(C)` on one line.
    pub fn trace_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{:.9} {:.9} {:.9e} {:.9e} {:.9}",
            self.record.v,
            self.phi(),
            self.record.a.norm(),
            self.record.b.norm(),
            self.record.c().arg()
        );
        s
    }
}

#[inline]
pub fn wiener_increment<R: Rng + ?Sized>(rng: &mut R, dv: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * dv.sqrt()
}

/// `I dv = 2 Re(alpha_v e^{-i Phi}) dv + dW`.
#[inline]
pub fn signal_increment(alpha_v: Complex64, phi: f64, dw: f64, dv: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    2.0 * (alpha_v.re * c + alpha_v.im * s) * dv + dw
}

/// `dA = e^{i Phi} I dv`, `dB = -e^{2i Phi} dv`.
#[inline]
pub fn update_record(record: &DyneRecord, signal_dv: f64, phi: f64, dv: f64) -> DyneRecord {
    let e = Complex64::from_polar(1.0, phi);
    DyneRecord {
        a: record.a + e * signal_dv,
        b: record.b - e * e * dv,
        v: record.v + dv,
    }
}

/// `B_v^S = (1 - v) / (1/B_0^S - B_v*)`; exactly zero for coherent input.
#[inline]
pub fn closed_form_bs(b0_lin: Complex64, b_v: Complex64, v: f64) -> Complex64 {
    if b0_lin == Complex64::new(0.0, 0.0) {
        return b0_lin;
    }
    (1.0 - v) / (b0_lin.inv() - b_v.conj())
}

/// Euler-Maruyama update of the scaled amplitude (Ito form, no drift).
pub fn step_alpha(
    state: &SystemState,
    record: &DyneRecord,
    phi: f64,
    dw: f64,
    dv: f64,
) -> Result<SystemState> {
    let alpha_v = advance_alpha(state, record, phi, dw).map_err(|modulus| Error::StateBlowup {
        step: 0,
        v: record.v,
        modulus,
    })?;
    Ok(SystemState {
        alpha_v,
        b0_lin: state.b0_lin,
        v: state.v + dv,
    })
}

#[inline]
fn advance_alpha(
    state: &SystemState,
    record: &DyneRecord,
    phi: f64,
    dw: f64,
) -> std::result::Result<Complex64, f64> {
    if state.b0_lin == Complex64::new(0.0, 0.0) {
        return Ok(state.alpha_v);
    }
    let e = Complex64::from_polar(1.0, phi);
    alpha_kick(state.b0_lin.inv(), record, e).map(|k| state.alpha_v + k * dw)
}

/// Noise gain of the amplitude update, `B_v^S / ((1 - v)(1 - |B_v^S|^2)) ((B_v^S)* e + e*)`,
/// with `inv_b0 = 1 / B_0^S` and `e = e^{i Phi}`. `Err` carries `|B_v^S|` on blowup.
#[inline]
fn alpha_kick(
    inv_b0: Complex64,
    record: &DyneRecord,
    e: Complex64,
) -> std::result::Result<Complex64, f64> {
    // gain = B_v^S / (1 - v), regular at v = 1
    let d = inv_b0 - record.b.conj();
    let gain = d.conj() / d.norm_sqr();
    let bs = gain * (1.0 - record.v);
    let bs2 = bs.norm_sqr();
    if bs2 >= MAX_B_MODULUS * MAX_B_MODULUS {
        return Err(bs2.sqrt());
    }
    Ok(gain / (1.0 - bs2) * (bs.conj() * e + e.conj()))
}

/// `arg C` of a finished record.
pub fn final_estimate(record: &DyneRecord) -> Result<f64> {
    let c = record.c();
    if c.norm() == 0.0 {
        return Err(Error::UndefinedEstimate);
    }
    Ok(crate::stats::wrap_phase(c.arg()))
}

pub fn run_trajectory(
    initial: &SqueezedState,
    true_phase: f64,
    policy: &FeedbackPolicy,
    grid: &TimeGrid,
    seed_path: SeedPath,
) -> Result<TrajectoryOutcome> {
    run_trajectory_observed(initial, true_phase, policy, grid, seed_path, |_| {})
}

/// [`run_trajectory`] with a callback after every integration step.
pub fn run_trajectory_observed<F>(
    initial: &SqueezedState,
    true_phase: f64,
    policy: &FeedbackPolicy,
    grid: &TimeGrid,
    seed_path: SeedPath,
    mut observe: F,
) -> Result<TrajectoryOutcome>
where
    F: FnMut(&StepView<'_>),
{
    grid.validate()?;
    policy.validate()?;
    let mut rng = seed_path.noise_rng();
    let input = initial.rotated(true_phase);
    let mut state = SystemState::from_state(&input);
    let mut record = DyneRecord::default();
    let inv_b0 = (state.b0_lin != Complex64::new(0.0, 0.0)).then(|| state.b0_lin.inv());

    let intervals = grid.intervals();
    let mut step = 0usize;
    for k in 0..intervals {
        let start = k as f64 * grid.dv_feedback;
        let end = if k + 1 == intervals {
            grid.v_end
        } else {
            (k + 1) as f64 * grid.dv_feedback
        };
        let h = (end - start) / grid.substeps as f64;
        let sqrt_h = h.sqrt();
        let e = policy.feedback_rotor(&record);
        let e2 = e * e;
        for j in 0..grid.substeps {
            let z: f64 = rng.sample(StandardNormal);
            let dw = z * sqrt_h;
            let signal = 2.0 * (state.alpha_v.re * e.re + state.alpha_v.im * e.im) * h + dw;
            if let Some(inv_b0) = inv_b0 {
                let kick = alpha_kick(inv_b0, &record, e).map_err(|modulus| Error::StateBlowup {
                    step,
                    v: record.v,
                    modulus,
                })?;
                state.alpha_v += kick * dw;
            }
            record.a += e * signal;
            record.b -= e2 * h;
            record.v = if j + 1 == grid.substeps {
                end
            } else {
                start + (j + 1) as f64 * h
            };
            state.v = record.v;
            observe(&StepView {
                step,
                rotor: e,
                record: &record,
                state: &state,
            });
            step += 1;
        }
    }

    let theta_hat = policy.final_estimate(&record)?;
    Ok(TrajectoryOutcome {
        final_record: record,
        theta_hat,
        true_phase,
        wrapped_error: wrap_error(theta_hat, true_phase),
        zeta_diag: zeta_from_record(record.a, record.b).ok(),
        policy: *policy,
        seed_path,
    })
}
