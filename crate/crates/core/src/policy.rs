//! Local-oscillator feedback laws.
//!
//! Every estimate-based policy sets `Phi = phi_hat + pi/2`, where `phi_hat` is a
//! running phase estimate built from the record so far. The policies differ only
//! in how `phi_hat` interpolates between `arg A` and the best estimate `arg C`.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::sde::DyneRecord;
use crate::squeezed::{optimal_n0, ZetaDecomposition};
use crate::stats::wrap_phase;

pub const DEFAULT_HETERODYNE_DETUNING: f64 = 500.0;
pub const DEFAULT_ONSET_V: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeedbackPolicy {
    /// Local oscillator ramped linearly in unscaled time, `Phi = detuning * t`.
    Heterodyne { detuning: f64 },
    /// `phi_hat = arg A`, final estimate `arg A`.
    #[serde(rename = "mark1")]
    MarkI,
    /// `phi_hat = arg A`, final estimate `arg C`.
    #[serde(rename = "mark2")]
    MarkII,
    /// `phi_hat = arg(C^(1-eps) A^eps)` with fixed `eps`.
    #[serde(rename = "const-eps")]
    ConstantEpsilon { epsilon: f64 },
    /// `eps(v) = (v^2 - |B|^2) / |C| * sqrt(v / (1 - v)) / divisor`.
    #[serde(rename = "time-eps")]
    TimeEpsilon {
        divisor: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon_max: Option<f64>,
    },
    /// [`FeedbackPolicy::TimeEpsilon`] plus a late-time kick of `B` toward its
    /// optimum whenever the running squeeze estimate overshoots.
    Corrected {
        lambda: f64,
        divisor: f64,
        onset_v: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon_max: Option<f64>,
    },
}

impl FeedbackPolicy {
    pub fn heterodyne() -> Self {
        Self::Heterodyne {
            detuning: DEFAULT_HETERODYNE_DETUNING,
        }
    }

    pub fn time_epsilon(divisor: f64) -> Self {
        Self::TimeEpsilon {
            divisor,
            epsilon_max: None,
        }
    }

    pub fn corrected(lambda: f64, divisor: f64) -> Self {
        Self::Corrected {
            lambda,
            divisor,
            onset_v: DEFAULT_ONSET_V,
            epsilon_max: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidPolicy(msg));
        match *self {
            Self::Heterodyne { detuning } if !detuning.is_finite() => {
                bad(format!("detuning {detuning}"))
            }
            Self::ConstantEpsilon { epsilon } if !(0.0..=1.0).contains(&epsilon) => {
                bad(format!("epsilon {epsilon} not in [0, 1]"))
            }
            Self::TimeEpsilon { divisor, epsilon_max } => check_time_eps(divisor, epsilon_max),
            Self::Corrected {
                lambda,
                divisor,
                onset_v,
                epsilon_max,
            } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return bad(format!("lambda {lambda} must be positive"));
                }
                if !(0.0..1.0).contains(&onset_v) {
                    return bad(format!("onset_v {onset_v} not in [0, 1)"));
                }
                check_time_eps(divisor, epsilon_max)
            }
            _ => Ok(()),
        }
    }

    /// Short stable identifier used in file names and CSV rows.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Heterodyne { .. } => "heterodyne",
            Self::MarkI => "mark1",
            Self::MarkII => "mark2",
            Self::ConstantEpsilon { .. } => "const-eps",
            Self::TimeEpsilon { .. } => "time-eps",
            Self::Corrected { .. } => "corrected",
        }
    }

    /// Parameters as `key=value` pairs joined by `;`.
    pub fn params(&self) -> String {
        let clamp = |m: Option<f64>| m.map(|m| format!(";epsilon_max={m}")).unwrap_or_default();
        match *self {
            Self::Heterodyne { detuning } => format!("detuning={detuning}"),
            Self::MarkI | Self::MarkII => String::new(),
            Self::ConstantEpsilon { epsilon } => format!("epsilon={epsilon}"),
            Self::TimeEpsilon { divisor, epsilon_max } => {
                format!("divisor={divisor}{}", clamp(epsilon_max))
            }
            Self::Corrected {
                lambda,
                divisor,
                onset_v,
                epsilon_max,
            } => format!(
                "lambda={lambda};divisor={divisor};onset_v={onset_v}{}",
                clamp(epsilon_max)
            ),
        }
    }

    /// Local-oscillator phase to hold from `record.v` until the next update.
    pub fn feedback_phase(&self, record: &DyneRecord) -> f64 {
        let v = record.v;
        let phi = match *self {
            Self::Heterodyne { detuning } => return heterodyne_phase(v, detuning),
            Self::MarkI | Self::MarkII => estimate_or_zero(record, 1.0),
            Self::ConstantEpsilon { epsilon } => estimate_or_zero(record, epsilon),
            Self::TimeEpsilon { divisor, epsilon_max } => {
                time_eps_estimate(record, divisor, epsilon_max)
            }
            Self::Corrected {
                lambda,
                divisor,
                onset_v,
                epsilon_max,
            } => {
                if let Some(phi) = corrected_override(record, lambda, onset_v) {
                    return phi;
                }
                time_eps_estimate(record, divisor, epsilon_max)
            }
        };
        wrap_phase(phi + FRAC_PI_2)
    }

    /// `e^{i Phi}` for the same phase as [`feedback_phase`](Self::feedback_phase),
    /// built without going through angles where possible. This is what the
    /// integrator consumes.
    pub fn feedback_rotor(&self, record: &DyneRecord) -> Complex64 {
        let u = match *self {
            Self::Heterodyne { detuning } => {
                return Complex64::from_polar(1.0, heterodyne_phase(record.v, detuning))
            }
            Self::MarkI | Self::MarkII => estimate_rotor(record, 1.0),
            Self::ConstantEpsilon { epsilon } => estimate_rotor(record, epsilon),
            Self::TimeEpsilon { divisor, epsilon_max } => {
                time_eps_rotor(record, divisor, epsilon_max)
            }
            Self::Corrected {
                lambda,
                divisor,
                onset_v,
                epsilon_max,
            } => {
                if let Some(phi) = corrected_override(record, lambda, onset_v) {
                    return Complex64::from_polar(1.0, phi);
                }
                time_eps_rotor(record, divisor, epsilon_max)
            }
        };
        // rotate by pi/2
        Complex64::new(-u.im, u.re)
    }

    /// Final phase estimate: `arg A` for mark I, `arg C` for everything else.
    pub fn final_estimate(&self, record: &DyneRecord) -> Result<f64> {
        match self {
            Self::MarkI => {
                if record.a.norm() == 0.0 {
                    Err(Error::UndefinedEstimate)
                } else {
                    Ok(wrap_phase(record.a.arg()))
                }
            }
            _ => crate::sde::final_estimate(record),
        }
    }
}

fn check_time_eps(divisor: f64, epsilon_max: Option<f64>) -> Result<()> {
    if !(divisor >= 1.0 && divisor.is_finite()) {
        return Err(Error::InvalidPolicy(format!("divisor {divisor} must be >= 1")));
    }
    if let Some(m) = epsilon_max {
        if !(m > 0.0) {
            return Err(Error::InvalidPolicy(format!("epsilon_max {m} must be positive")));
        }
    }
    Ok(())
}

fn estimate_or_zero(record: &DyneRecord, epsilon: f64) -> f64 {
    interp_estimate(record, epsilon).unwrap_or(0.0)
}

fn time_eps_estimate(record: &DyneRecord, divisor: f64, epsilon_max: Option<f64>) -> f64 {
    let mut eps = epsilon_schedule(record, divisor);
    if let Some(m) = epsilon_max {
        eps = eps.min(m);
    }
    estimate_or_zero(record, eps)
}

fn time_eps_rotor(record: &DyneRecord, divisor: f64, epsilon_max: Option<f64>) -> Complex64 {
    // Same as estimate_rotor(record, epsilon_schedule(..)) with C formed once.
    let a = record.a;
    let an = a.norm_sqr();
    let c = record.c();
    let cn = c.norm_sqr();
    if an == 0.0 || cn == 0.0 {
        return if an == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            a / an.sqrt()
        };
    }
    let v = record.v;
    let inv_cm = cn.sqrt().recip();
    let mut eps = if v <= 0.0 {
        0.0
    } else {
        (v * v - record.b.norm_sqr()) * inv_cm * (v / (1.0 - v)).sqrt() / divisor
    };
    if let Some(m) = epsilon_max {
        eps = eps.min(m);
    }
    if eps == 1.0 {
        return a / an.sqrt();
    }
    let delta = (a * c.conj()).arg();
    c * inv_cm * Complex64::from_polar(1.0, eps * delta)
}

/// `e^{i phi_hat}` for [`interp_estimate`], `1` where that has no value.
fn estimate_rotor(record: &DyneRecord, epsilon: f64) -> Complex64 {
    let a = record.a;
    let an = a.norm_sqr();
    if an == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let c = record.c();
    let cn = c.norm_sqr();
    if epsilon == 1.0 || cn == 0.0 {
        return a / an.sqrt();
    }
    let delta = (a * c.conj()).arg();
    c / cn.sqrt() * Complex64::from_polar(1.0, epsilon * delta)
}

/// `arg(C^(1-eps) A^eps)`, taken as `arg C + eps * wrap(arg A - arg C)`.
///
/// On `eps in [0, 1]` this is the principal branch; beyond it the same line
/// extrapolates continuously. Falls back to `arg A` when `C` vanishes (a
/// held homodyne phase makes `C` cancel exactly, and feeding back on a fixed
/// angle would keep it there). `None` when `A` vanishes.
pub fn interp_estimate(record: &DyneRecord, epsilon: f64) -> Option<f64> {
    let a = record.a;
    if a.norm_sqr() == 0.0 {
        return None;
    }
    let arg_a = a.arg();
    if epsilon == 1.0 {
        return Some(arg_a);
    }
    let c = record.c();
    if c.norm_sqr() == 0.0 {
        return Some(arg_a);
    }
    let arg_c = c.arg();
    Some(arg_c + epsilon * wrap_phase(arg_a - arg_c))
}

/// Time-dependent interpolation weight. `(v^2 - |B|^2) / |C|` estimates
/// `1 / |alpha|`; the `sqrt(v / (1 - v))` factor starts it at zero and lets it
/// grow without bound toward `v = 1`. Falls back to `1` when `C = 0`.
pub fn epsilon_schedule(record: &DyneRecord, divisor: f64) -> f64 {
    let v = record.v;
    let cm = record.c().norm_sqr().sqrt();
    if cm == 0.0 {
        return 1.0;
    }
    if v <= 0.0 {
        return 0.0;
    }
    (v * v - record.b.norm_sqr()) / cm * (v / (1.0 - v)).sqrt() / divisor
}

/// Running squeeze estimate at time `v` from `alpha_v = C_v / (v^2 - |B_v|^2)` and
/// `zeta_v = -(B_v e^{-2i arg C_v} / |B_v|) atanh(|B_v| / v)`.
pub fn zeta_estimate_at(record: &DyneRecord) -> Result<ZetaDecomposition> {
    let v = record.v;
    if !(v > 0.0) {
        return Err(domain("v", v));
    }
    let bm = record.b.norm();
    if bm >= v {
        return Err(domain("|B_v| / v", bm / v));
    }
    let c = record.c();
    if c.norm() == 0.0 {
        return Err(Error::UndefinedPhase);
    }
    let alpha = c / (v * v - bm * bm);
    let zeta = if bm == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        let ref_phase = Complex64::from_polar(1.0, -2.0 * c.arg());
        -(record.b * ref_phase / bm) * (bm / v).atanh()
    };
    let s = zeta.norm().sinh();
    let nbar_est = alpha.norm_sqr() + s * s;
    Ok(ZetaDecomposition {
        nbar_est,
        zeta,
        n0: nbar_est * (2.0 * zeta.re).exp(),
    })
}

/// `B_v^opt = v (C / C*) tanh|zeta_opt|`.
pub fn optimal_b(record: &DyneRecord, zeta_opt_modulus: f64) -> Complex64 {
    let c = record.c();
    record.v * (c / c.conj()) * zeta_opt_modulus.tanh()
}

/// Alternative phase from the correction, or `None` when gated off.
fn corrected_override(record: &DyneRecord, lambda: f64, onset_v: f64) -> Option<f64> {
    let v = record.v;
    if v < onset_v {
        return None;
    }
    let est = zeta_estimate_at(record).ok()?;
    let n0_opt = optimal_n0(est.nbar_est).ok()?;
    if n0_opt <= 0.0 {
        return None;
    }
    let zeta_opt = (0.5 * (n0_opt / est.nbar_est).ln()).abs();
    let c = record.c();
    let alpha2 = c.norm_sqr() / (v * v - record.b.norm_sqr()).powi(2);
    let threshold = zeta_opt * (lambda * alpha2 * (1.0 - v)).exp();
    if est.zeta.norm() <= threshold {
        return None;
    }
    alternative_phase(record, zeta_opt)
}

/// `Phi = arg[B_v - B_v^opt] / 2`, so that `dB = -e^{2i Phi} dv` points from
/// `B_v` straight at `B_v^opt`. `None` when the two coincide.
pub fn alternative_phase(record: &DyneRecord, zeta_opt_modulus: f64) -> Option<f64> {
    let diff = record.b - optimal_b(record, zeta_opt_modulus);
    if diff.norm() == 0.0 {
        return None;
    }
    Some(0.5 * diff.arg())
}

/// Full corrected-policy phase: the alternative phase once triggered after
/// `onset_v`, otherwise the time-dependent epsilon feedback.
pub fn corrected_phase(record: &DyneRecord, lambda: f64, divisor: f64, onset_v: f64) -> f64 {
    FeedbackPolicy::Corrected {
        lambda,
        divisor,
        onset_v,
        epsilon_max: None,
    }
    .feedback_phase(record)
}

/// `Phi = -detuning * ln(1 - v)`, i.e. linear in unscaled time.
pub fn heterodyne_phase(v: f64, detuning: f64) -> f64 {
    -detuning * (1.0 - v).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rec(a: Complex64, b: Complex64, v: f64) -> DyneRecord {
        DyneRecord { a, b, v }
    }

    #[test]
    fn mark2_uses_arg_a() {
        let r = rec(Complex64::from_polar(1.3, FRAC_PI_4), c(0.2, -0.1), 0.4);
        assert_relative_eq!(
            FeedbackPolicy::MarkII.feedback_phase(&r),
            FRAC_PI_4 + FRAC_PI_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn constant_eps_endpoints() {
        let r = rec(c(0.3, 0.8), c(-0.2, 0.1), 0.5);
        let one = FeedbackPolicy::ConstantEpsilon { epsilon: 1.0 }.feedback_phase(&r);
        assert_eq!(one, FeedbackPolicy::MarkII.feedback_phase(&r));
        let zero = interp_estimate(&r, 0.0).unwrap();
        assert_relative_eq!(zero, r.c().arg(), epsilon = 1e-15);
    }

    #[test]
    fn interp_is_linear_on_wrapped_difference() {
        // arg C = 0.2, arg A = 0.6 with B chosen real so C stays on a known ray.
        let v = 0.5;
        let a = Complex64::from_polar(1.0, 0.6);
        // C = A v + B A*; pick B = (e^{0.2 i} k - A v) / A*
        let target = Complex64::from_polar(0.7, 0.2);
        let b = (target - a * v) / a.conj();
        let r = rec(a, b, v);
        assert_relative_eq!(r.c().arg(), 0.2, epsilon = 1e-14);
        assert_relative_eq!(interp_estimate(&r, 0.25).unwrap(), 0.3, epsilon = 1e-14);
        assert_relative_eq!(interp_estimate(&r, 0.0).unwrap(), 0.2, epsilon = 1e-14);
        assert_relative_eq!(interp_estimate(&r, 1.0).unwrap(), 0.6, epsilon = 1e-14);
    }

    #[test]
    fn interp_crosses_branch_cut_continuously() {
        let v = 1.0;
        let a = Complex64::from_polar(1.0, PI - 0.1);
        let target = Complex64::from_polar(1.0, -PI + 0.1);
        let b = (target - a * v) / a.conj();
        let r = rec(a, b, v);
        // wrapped difference is -0.2, so halfway is exactly at +-pi
        let mid = interp_estimate(&r, 0.5).unwrap();
        assert_relative_eq!(wrap_phase(mid).abs(), PI, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_records_fall_back_to_zero() {
        let r = DyneRecord::default();
        assert_eq!(FeedbackPolicy::MarkII.feedback_phase(&r), FRAC_PI_2);
        assert_eq!(FeedbackPolicy::time_epsilon(1.0).feedback_phase(&r), FRAC_PI_2);
        assert_eq!(
            FeedbackPolicy::ConstantEpsilon { epsilon: 0.3 }.feedback_phase(&r),
            FRAC_PI_2
        );
        assert!(interp_estimate(&r, 0.3).is_none());
    }

    #[test]
    fn vanishing_c_falls_back_to_arg_a() {
        // A on the imaginary axis with B = v cancels C exactly.
        let r = rec(c(0.0, 0.4), c(0.5, 0.0), 0.5);
        assert_eq!(r.c(), c(0.0, 0.0));
        assert_relative_eq!(interp_estimate(&r, 0.3).unwrap(), FRAC_PI_2);
        let p = FeedbackPolicy::ConstantEpsilon { epsilon: 0.3 };
        assert_relative_eq!(p.feedback_phase(&r), PI);
        assert_relative_eq!(p.feedback_rotor(&r).re, -1.0);
    }

    #[test]
    fn epsilon_schedule_examples() {
        let r = rec(c(0.7, 0.0), c(0.25, 0.0), 0.5);
        assert_relative_eq!(r.c().re, 0.525, epsilon = 1e-15);
        assert_relative_eq!(epsilon_schedule(&r, 1.0), 0.1875 / 0.525, epsilon = 1e-14);
        assert_relative_eq!(epsilon_schedule(&r, 1.0), 0.35714285714285715, epsilon = 1e-14);
        assert_relative_eq!(epsilon_schedule(&r, 1.2), 0.29761904761904767, epsilon = 1e-14);

        // early-time limit
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let v = 10f64.powi(-k);
            let e = epsilon_schedule(&rec(c(0.5, 0.1), c(0.0, 0.0), v), 1.0);
            assert!(e < prev && e >= 0.0);
            prev = e;
        }
        assert!(prev < 1e-3);

        assert_eq!(epsilon_schedule(&DyneRecord::default(), 1.0), 1.0);
    }

    #[test]
    fn zeta_estimate_examples() {
        let r = rec(c(0.4, 0.3), c(0.0, 0.0), 0.6);
        assert_eq!(zeta_estimate_at(&r).unwrap().zeta, c(0.0, 0.0));

        // B_v = v e^{2i arg C} tanh(0.5) inverts to zeta = -0.5. Solve for B with
        // fixed A so that C keeps the phase used to build B.
        let v = 0.7;
        let a = Complex64::from_polar(0.9, 0.3);
        let mut b = c(0.0, 0.0);
        for _ in 0..200 {
            let cc = a * v + b * a.conj();
            b = v * Complex64::from_polar(1.0, 2.0 * cc.arg()) * 0.5f64.tanh();
        }
        let z = zeta_estimate_at(&rec(a, b, v)).unwrap();
        assert_relative_eq!(z.zeta.re, -0.5, epsilon = 1e-12);
        assert!(z.zeta.im.abs() < 1e-12);

        assert!(zeta_estimate_at(&rec(a, c(0.8, 0.0), 0.7)).is_err());
        assert!(zeta_estimate_at(&DyneRecord::default()).is_err());
    }

    #[test]
    fn zeta_estimate_matches_pom_mapping_at_v1() {
        let a = c(0.13, 0.05);
        let b = c(0.8, -0.3);
        let r = rec(a, b, 1.0);
        let z = zeta_estimate_at(&r).unwrap();
        let w = crate::squeezed::zeta_from_record(a, b).unwrap();
        assert!((z.zeta - w.zeta).norm() < 1e-12);
        assert_relative_eq!(z.nbar_est, w.nbar_est, max_relative = 1e-12);
    }

    #[test]
    fn heterodyne_ramp() {
        assert_eq!(heterodyne_phase(0.0, 500.0), 0.0);
        assert_relative_eq!(heterodyne_phase(1.0 - (-1f64).exp(), 2.0), 2.0, epsilon = 1e-14);
        let p = FeedbackPolicy::heterodyne();
        let r = rec(c(1.0, 1.0), c(0.1, 0.0), 0.3);
        assert_eq!(p.feedback_phase(&r), heterodyne_phase(0.3, DEFAULT_HETERODYNE_DETUNING));
    }

    #[test]
    fn heterodyne_b_is_small_by_quadrature() {
        // B(1) = -int_0^1 u^{-2i D} du after u = 1 - v; integrate in x = ln u
        // with composite Simpson: -int_{-inf}^0 e^{(1 - 2iD) x} dx.
        let d = 500.0;
        let (lo, n) = (-40.0f64, 4_000_000usize);
        let h = -lo / n as f64;
        let f = |x: f64| Complex64::new(x, -2.0 * d * x).exp();
        let mut s = f(lo) + f(0.0);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += f(lo + k as f64 * h) * w;
        }
        let b = -s * h / 3.0;
        assert!(b.norm() < 0.01, "|B| = {}", b.norm());
        assert_relative_eq!(b.norm(), 1.0 / (1.0 + 4.0 * d * d).sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn corrected_gates() {
        let r = rec(c(0.2, 0.05), c(0.3, 0.1), 0.5);
        let te = FeedbackPolicy::time_epsilon(1.0);
        assert_eq!(corrected_phase(&r, 1e-3, 1.0, 0.9), te.feedback_phase(&r));

        // After onset but with no squeezing accumulated the trigger is off.
        let r = rec(c(0.2, 0.05), c(0.0, 0.0), 0.95);
        assert_eq!(corrected_phase(&r, 1e-3, 1.0, 0.9), te.feedback_phase(&r));
    }

    #[test]
    fn alternative_phase_points_toward_optimum() {
        // real configuration: alpha real, arg C = 0, B_v = 0.9 B_v^opt
        let (v, alpha) = (0.95, 100.0);
        let zopt = (0.5 * (optimal_n0(alpha * alpha).unwrap() / (alpha * alpha)).ln()).abs();
        let b = c(0.9 * v * zopt.tanh(), 0.0);
        let cc = alpha * (v * v - b.norm_sqr());
        let r = rec(c(cc / (v + b.re), 0.0), b, v);
        let bopt = optimal_b(&r, zopt);
        assert_relative_eq!(r.b.re, 0.9 * bopt.re, max_relative = 1e-12);
        let phi = alternative_phase(&r, zopt).unwrap();
        let step = -Complex64::from_polar(1.0, 2.0 * phi);
        assert!(((bopt - r.b).conj() * step).re > 0.0);
        assert!(alternative_phase(&rec(r.a, bopt, v), zopt).is_none());
    }

    #[test]
    fn trigger_fires_for_oversqueezed_record() {
        let v = 0.97;
        let alpha = 30.0;
        let n0 = optimal_n0(alpha * alpha).unwrap();
        let zopt = (0.5 * (n0 / (alpha * alpha)).ln()).abs();
        // |B| / v = tanh(zopt + 0.5) overshoots the optimum
        let b = c(v * (zopt + 0.5).tanh(), 0.0);
        let cc = alpha * (v * v - b.norm_sqr());
        let r = rec(c(cc / (v + b.re), 0.0), b, v);
        let est = zeta_estimate_at(&r).unwrap();
        assert_relative_eq!(est.zeta.norm(), zopt + 0.5, max_relative = 1e-2);
        let phi = corrected_phase(&r, 1e-3, 1.0, 0.9);
        let te = FeedbackPolicy::time_epsilon(1.0).feedback_phase(&r);
        assert!((phi - te).abs() > 1e-6);
        // dB = -e^{2i phi} dv heads back toward B_opt
        let bopt = optimal_b(&r, zeta_estimate_opt(&r));
        let step = -Complex64::from_polar(1.0, 2.0 * phi);
        assert!(((bopt - r.b).conj() * step).re > 0.0);
    }

    fn zeta_estimate_opt(r: &DyneRecord) -> f64 {
        let est = zeta_estimate_at(r).unwrap();
        (0.5 * (optimal_n0(est.nbar_est).unwrap() / est.nbar_est).ln()).abs()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn alternative_feedback_direction(
            ar in -1.0f64..1.0, ai in -1.0f64..1.0,
            br in -1.0f64..1.0, bi in -1.0f64..1.0,
            v in 0.9f64..0.999,
        ) {
            let b = c(br, bi) * (0.999 * v / 2f64.sqrt());
            let r = rec(c(ar, ai), b, v);
            prop_assume!(r.c().norm() > 1e-6);
            let Some(phi) = corrected_override(&r, 1e-12, 0.9) else {
                return Ok(());
            };
            let zopt = zeta_estimate_opt(&r);
            let bopt = optimal_b(&r, zopt);
            let step = -Complex64::from_polar(1.0, 2.0 * phi);
            prop_assert!(((bopt - r.b).conj() * step).re > 0.0);
        }

        #[test]
        fn corrected_without_trigger_is_time_eps(
            ar in -1.0f64..1.0, ai in -1.0f64..1.0,
            br in -0.5f64..0.5, bi in -0.5f64..0.5,
            v in 0.01f64..0.89,
        ) {
            let r = rec(c(ar, ai), c(br, bi) * v, v);
            prop_assert_eq!(
                corrected_phase(&r, 1e-3, 1.1, 0.9),
                FeedbackPolicy::time_epsilon(1.1).feedback_phase(&r)
            );
        }

        #[test]
        fn policies_are_pure(
            ar in -1.0f64..1.0, ai in -1.0f64..1.0,
            br in -0.5f64..0.5, bi in -0.5f64..0.5,
            v in 0.0f64..0.999,
        ) {
            let r = rec(c(ar, ai), c(br, bi) * v, v);
            for p in [
                FeedbackPolicy::heterodyne(),
                FeedbackPolicy::MarkI,
                FeedbackPolicy::MarkII,
                FeedbackPolicy::ConstantEpsilon { epsilon: 0.4 },
                FeedbackPolicy::time_epsilon(1.0),
                FeedbackPolicy::corrected(1e-3, 1.0),
            ] {
                let x = p.feedback_phase(&r);
                prop_assert_eq!(x.to_bits(), p.feedback_phase(&r.clone()).to_bits());
                prop_assert!(x.is_finite());
                let u = p.feedback_rotor(&r);
                prop_assert_eq!(u, p.feedback_rotor(&r.clone()));
            }
        }

        #[test]
        fn rotor_matches_phase(
            ar in -1.0f64..1.0, ai in -1.0f64..1.0,
            br in -0.7f64..0.7, bi in -0.7f64..0.7,
            v in 0.0f64..0.999,
        ) {
            let r = rec(c(ar, ai), c(br, bi) * v, v);
            for p in [
                FeedbackPolicy::heterodyne(),
                FeedbackPolicy::MarkI,
                FeedbackPolicy::ConstantEpsilon { epsilon: 0.4 },
                FeedbackPolicy::ConstantEpsilon { epsilon: 0.0 },
                FeedbackPolicy::time_epsilon(1.0),
                FeedbackPolicy::corrected(1e-3, 1.2),
            ] {
                let want = Complex64::from_polar(1.0, p.feedback_phase(&r));
                let got = p.feedback_rotor(&r);
                prop_assert!((got - want).norm() < 1e-12, "{:?}: {:?} vs {:?}", p, got, want);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(FeedbackPolicy::ConstantEpsilon { epsilon: 1.5 }.validate().is_err());
        assert!(FeedbackPolicy::time_epsilon(0.5).validate().is_err());
        assert!(FeedbackPolicy::corrected(0.0, 1.0).validate().is_err());
        assert!(FeedbackPolicy::corrected(1e-3, 1.2).validate().is_ok());
        assert!(FeedbackPolicy::MarkI.validate().is_ok());
    }
}
