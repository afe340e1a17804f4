//! Circular statistics, squeeze-scatter diagnostics and power-law fits.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::sde::TrajectoryOutcome;
use crate::squeezed::{optimal_n0, optimal_zeta, ZetaDecomposition};

/// Number of contiguous batches used for jackknife standard errors.
pub const JACKKNIFE_BATCHES: usize = 50;

/// Map any angle into `(-pi, pi]`.
#[inline]
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

pub fn wrap_error(theta_hat: f64, true_phase: f64) -> f64 {
    wrap_phase(theta_hat - true_phase)
}

fn resultant(errors: &[f64]) -> Complex64 {
    let s: Complex64 = errors.iter().map(|&t| Complex64::from_polar(1.0, t)).sum();
    s / errors.len() as f64
}

fn holevo_from_resultant(r: Complex64) -> f64 {
    let m = r.norm_sqr();
    if m == 0.0 {
        f64::INFINITY
    } else {
        (1.0 / m - 1.0).max(0.0)
    }
}

/// Holevo variance `|<e^{i theta}>|^-2 - 1`; `+inf` when the mean resultant vanishes.
pub fn holevo_variance(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Invalid("holevo_variance of empty sample".into()));
    }
    Ok(holevo_from_resultant(resultant(errors)))
}

/// Mean square error about the true phase, `N^-1 sum theta^2`.
pub fn wrapped_variance(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Invalid("wrapped_variance of empty sample".into()));
    }
    Ok(errors.iter().map(|t| t * t).sum::<f64>() / errors.len() as f64)
}

/// Delete-one-batch jackknife over contiguous batches. `None` below two batches.
pub fn jackknife_stderr<F>(samples: &[f64], batches: usize, stat: F) -> Option<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let n = samples.len();
    let g = batches.min(n);
    if g < 2 {
        return None;
    }
    let bounds: Vec<usize> = (0..=g).map(|k| k * n / g).collect();
    let mut leave_out = Vec::with_capacity(g);
    let mut buf = Vec::with_capacity(n);
    for k in 0..g {
        buf.clear();
        buf.extend_from_slice(&samples[..bounds[k]]);
        buf.extend_from_slice(&samples[bounds[k + 1]..]);
        leave_out.push(stat(&buf));
    }
    if leave_out.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mean = leave_out.iter().sum::<f64>() / g as f64;
    let ss: f64 = leave_out.iter().map(|x| (x - mean).powi(2)).sum();
    Some(((g as f64 - 1.0) / g as f64 * ss).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_samples: usize,
    pub holevo_variance: f64,
    /// Mean resultant vanished; `holevo_variance` is `+inf`.
    pub holevo_diverged: bool,
    pub wrapped_variance: f64,
    pub mean_error: f64,
    pub mean_error_stderr: Option<f64>,
    pub stderr_holevo: Option<f64>,
    pub stderr_wrapped: Option<f64>,
    pub stderr_method: String,
    pub failed_count: usize,
}

impl EnsembleStats {
    /// Summaries of wrapped errors in trajectory order. `failed_count` is carried
    /// through untouched.
    pub fn from_errors(errors: &[f64], failed_count: usize) -> Result<Self> {
        let holevo = holevo_variance(errors)?;
        let wrapped = wrapped_variance(errors)?;
        let n = errors.len();
        let mean = errors.iter().sum::<f64>() / n as f64;
        let mean_se = if n >= 2 {
            let ss: f64 = errors.iter().map(|e| (e - mean).powi(2)).sum();
            Some((ss / (n as f64 - 1.0) / n as f64).sqrt())
        } else {
            None
        };
        let hv = |s: &[f64]| holevo_from_resultant(resultant(s));
        let wv = |s: &[f64]| s.iter().map(|t| t * t).sum::<f64>() / s.len() as f64;
        Ok(Self {
            n_samples: n,
            holevo_variance: holevo,
            holevo_diverged: holevo.is_infinite(),
            wrapped_variance: wrapped,
            mean_error: mean,
            mean_error_stderr: mean_se,
            stderr_holevo: jackknife_stderr(errors, JACKKNIFE_BATCHES, hv),
            stderr_wrapped: jackknife_stderr(errors, JACKKNIFE_BATCHES, wv),
            stderr_method: format!("jackknife-{JACKKNIFE_BATCHES}-batches"),
            failed_count,
        })
    }
}

/// `Delta V / V_min ~ (Delta|zeta|)^2 (1 + 4 n0)`.
pub fn excess_from_modulus(rms_dzeta: f64, n0: f64) -> Result<f64> {
    if !(rms_dzeta.is_finite() && n0 >= 0.0) {
        return Err(domain("n0", n0));
    }
    Ok(rms_dzeta * rms_dzeta * (1.0 + 4.0 * n0))
}

/// Absolute excess variance `(Delta arg zeta)^2 / (16 n0)`.
pub fn excess_from_phase(rms_arg_zeta: f64, n0: f64) -> Result<f64> {
    if !(n0 > 0.0) {
        return Err(domain("n0", n0));
    }
    Ok(rms_arg_zeta * rms_arg_zeta / (16.0 * n0))
}

/// [`excess_from_phase`] as a ratio to the leading intrinsic term `n0 / (4 nbar^2)`.
pub fn excess_from_phase_ratio(rms_arg_zeta: f64, n0: f64, nbar: f64) -> Result<f64> {
    if !(nbar > 0.0) {
        return Err(domain("nbar", nbar));
    }
    Ok(excess_from_phase(rms_arg_zeta, n0)? / (n0 / (4.0 * nbar * nbar)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub exponent: f64,
    pub prefactor: f64,
    pub exponent_stderr: f64,
    pub r_squared: f64,
}

impl FitResult {
    pub fn eval(&self, nbar: f64) -> f64 {
        self.prefactor * nbar.powf(-self.exponent)
    }
}

/// Least-squares fit of `V = c nbar^-p` in log-log space.
pub fn power_law_fit(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::Invalid(format!(
            "power-law fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    for &(n, v) in points {
        if !(n > 0.0 && n.is_finite()) {
            return Err(domain("nbar", n));
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(domain("variance", v));
        }
    }
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let xm = xs.iter().sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("power-law fit needs distinct nbar".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let icept = ym - slope * xm;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - icept - slope * x).powi(2))
        .sum();
    let syy: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let se = (sse / (m - 2.0) / sxx).sqrt();
    Ok(FitResult {
        exponent: -slope,
        prefactor: icept.exp(),
        // floor at one ulp of the slope so a noiseless fit still reports > 0
        exponent_stderr: se.max(f64::EPSILON * slope.abs().max(1.0)),
        r_squared: if syy == 0.0 { 1.0 } else { 1.0 - sse / syy },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub nbar_est: f64,
    pub zeta_real: f64,
    pub zeta_arg: f64,
    /// `zeta_opt(nbar_est)` from the asymptotic `n0` formula.
    pub zeta_opt: f64,
}

impl ScatterPoint {
    /// `|zeta| - |zeta_opt|`; positive means more squeezed than optimum.
    pub fn modulus_deviation(&self, zeta_modulus: f64) -> f64 {
        zeta_modulus - self.zeta_opt.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaScatter {
    pub points: Vec<ScatterPoint>,
    /// rms of `|zeta| - |zeta_opt(nbar_est)|`.
    pub rms_dev_modulus: f64,
    /// rms of `arg(-zeta)`, the tilt of the squeezing axis away from the
    /// phase quadrature.
    pub rms_dev_phase: f64,
    /// Share of points with `Re zeta < zeta_opt`.
    pub fraction_below: f64,
    pub skipped: usize,
}

/// Squeeze decomposition scatter of finished trajectories.
pub fn zeta_scatter(outcomes: &[TrajectoryOutcome]) -> ZetaScatter {
    zeta_scatter_of(outcomes.iter().map(|o| o.zeta_diag))
}

/// Scatter of per-trajectory decompositions; `None` entries count as skipped.
pub fn zeta_scatter_of<I>(decomps: I) -> ZetaScatter
where
    I: IntoIterator<Item = Option<ZetaDecomposition>>,
{
    let mut points = Vec::new();
    let (mut s_mod, mut s_arg) = (0.0, 0.0);
    let mut below = 0usize;
    let mut skipped = 0usize;
    for z in decomps {
        let Some(z) = z else {
            skipped += 1;
            continue;
        };
        let Ok(zopt) = optimal_zeta(z.nbar_est) else {
            skipped += 1;
            continue;
        };
        let p = ScatterPoint {
            nbar_est: z.nbar_est,
            zeta_real: z.zeta.re,
            zeta_arg: z.zeta.arg(),
            zeta_opt: zopt,
        };
        let dm = p.modulus_deviation(z.zeta.norm());
        let da = if z.zeta.norm() == 0.0 { 0.0 } else { (-z.zeta).arg() };
        s_mod += dm * dm;
        s_arg += da * da;
        if p.zeta_real < zopt {
            below += 1;
        }
        points.push(p);
    }
    let n = points.len();
    let (rms_m, rms_a, frac) = if n == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let k = n as f64;
        ((s_mod / k).sqrt(), (s_arg / k).sqrt(), below as f64 / k)
    };
    ZetaScatter {
        points,
        rms_dev_modulus: rms_m,
        rms_dev_phase: rms_a,
        fraction_below: frac,
        skipped,
    }
}

/// Excess-variance ratios implied by a scatter, with `n0` taken at the optimum
/// for `nbar`: `(modulus, phase)`.
pub fn scatter_excess(scatter: &ZetaScatter, nbar: f64) -> Result<(f64, f64)> {
    let n0 = optimal_n0(nbar)?;
    Ok((
        excess_from_modulus(scatter.rms_dev_modulus, n0)?,
        excess_from_phase_ratio(scatter.rms_dev_phase, n0, nbar)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::FeedbackPolicy;
    use crate::sde::{DyneRecord, SeedPath};
    use crate::squeezed::ZetaDecomposition;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn wrap_examples() {
        assert_relative_eq!(wrap_error(0.1, 0.0), 0.1, epsilon = 1e-15);
        assert_relative_eq!(wrap_error(PI + 0.1, 0.0), -PI + 0.1, epsilon = 1e-15);
        assert_eq!(wrap_error(-PI, 0.0), PI);
        assert_eq!(wrap_error(PI, 0.0), PI);
    }

    #[test]
    fn holevo_examples() {
        assert_eq!(holevo_variance(&[0.0; 10]).unwrap(), 0.0);
        let a = 0.4;
        let xs = [a, -a, a, -a];
        assert_relative_eq!(holevo_variance(&xs).unwrap(), a.cos().powi(-2) - 1.0, max_relative = 1e-12);
        let v = holevo_variance(&[0.0, PI]).unwrap();
        assert!(v.is_infinite() || v > 1e25);
        let quarter = [0.0, PI / 2.0, PI, -PI / 2.0];
        let s = EnsembleStats::from_errors(&quarter, 0).unwrap();
        assert!(s.holevo_diverged || s.holevo_variance > 1e25);
        assert!(holevo_variance(&[]).is_err());
    }

    #[test]
    fn wrapped_examples() {
        assert_eq!(wrapped_variance(&[0.0; 3]).unwrap(), 0.0);
        assert_relative_eq!(wrapped_variance(&[0.3, -0.3]).unwrap(), 0.09, epsilon = 1e-15);
    }

    fn gaussian(sigma: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| wrap_phase(sigma * rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    #[test]
    fn holevo_tends_to_wrapped_for_small_spread() {
        // For a normal with variance s2, Holevo = e^{s2} - 1 = s2 + s2^2/2 + ...
        let mut prev_gap = f64::INFINITY;
        for sigma in [0.3, 0.1, 0.03] {
            let xs = gaussian(sigma, 200_000, 5);
            let h = holevo_variance(&xs).unwrap();
            let w = wrapped_variance(&xs).unwrap();
            let s2 = sigma * sigma;
            assert!((h - w).abs() / w < 2.0 * s2 + 0.02, "sigma {sigma}");
            let gap = ((h - w) / w).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
    }

    #[test]
    fn jackknife_matches_mean_stderr_for_the_mean() {
        let xs = gaussian(1.0, 5000, 9);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let jk = jackknife_stderr(&xs, 50, mean).unwrap();
        let st = EnsembleStats::from_errors(&xs, 0).unwrap();
        let naive = st.mean_error_stderr.unwrap();
        assert!((jk / naive - 1.0).abs() < 0.3, "{jk} vs {naive}");
        assert!(jackknife_stderr(&[1.0], 50, mean).is_none());
    }

    #[test]
    fn single_sample_stats() {
        let s = EnsembleStats::from_errors(&[0.2], 0).unwrap();
        assert_eq!(s.n_samples, 1);
        assert!(s.stderr_holevo.is_none());
        assert!(s.mean_error_stderr.is_none());
        assert!(s.holevo_variance.is_finite());
    }

    #[test]
    fn excess_examples() {
        assert_eq!(excess_from_modulus(0.0, 10.0).unwrap(), 0.0);
        let n0 = optimal_n0(3.32e5).unwrap();
        assert_relative_eq!(n0, 13.63971534241618, max_relative = 1e-12);
        let r = excess_from_modulus(0.16, n0).unwrap();
        assert_relative_eq!(r, 1.422306851063417, max_relative = 1e-12);
        assert!(r > 1.0);
        assert_relative_eq!(
            excess_from_modulus(0.64, n0).unwrap(),
            16.0 * r,
            max_relative = 1e-12
        );
        assert_eq!(excess_from_phase(0.0, 10.0).unwrap(), 0.0);
        assert_relative_eq!(excess_from_phase(0.2, 10.0).unwrap(), 2.5e-4, max_relative = 1e-12);
        assert!(excess_from_phase(0.2, 0.0).is_err());
        assert_relative_eq!(
            excess_from_phase_ratio(0.2, 10.0, 100.0).unwrap(),
            2.5e-4 / (10.0 / 4e4),
            max_relative = 1e-12
        );
    }

    #[test]
    fn fit_exact_power_laws() {
        let pts: Vec<(f64, f64)> = (0..6)
            .map(|k| {
                let n = 10f64.powf(2.0 + 0.5 * k as f64);
                (n, 0.125 * n.powf(-1.5))
            })
            .collect();
        let f = power_law_fit(&pts).unwrap();
        assert!((f.exponent - 1.5).abs() < 1e-10);
        assert!((f.prefactor - 0.125).abs() < 1e-10);
        assert!(f.exponent_stderr > 0.0);

        let pts: Vec<(f64, f64)> = [10.0, 50.0, 300.0].iter().map(|&n| (n, 0.25 / n)).collect();
        let f = power_law_fit(&pts).unwrap();
        assert!((f.exponent - 1.0).abs() < 1e-10);
        assert!((f.prefactor - 0.25).abs() < 1e-10);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(power_law_fit(&[(1.0, 1.0), (2.0, 0.5)]).is_err());
        assert!(power_law_fit(&[(1.0, 1.0), (2.0, 0.0), (3.0, 0.1)]).is_err());
        assert!(power_law_fit(&[(-1.0, 1.0), (2.0, 1.0), (3.0, 0.1)]).is_err());
    }

    #[test]
    fn fit_noisy_within_three_stderr() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut hits = 0;
        for _ in 0..200 {
            let pts: Vec<(f64, f64)> = (0..8)
                .map(|k| {
                    let n = 10f64.powf(2.0 + 0.3 * k as f64);
                    let z: f64 = rng.sample(StandardNormal);
                    (n, 0.3 * n.powf(-1.685) * (0.05 * z).exp())
                })
                .collect();
            let f = power_law_fit(&pts).unwrap();
            if (f.exponent - 1.685).abs() < 3.0 * f.exponent_stderr {
                hits += 1;
            }
        }
        // a correct stderr covers the truth ~99% of the time at 3 sigma
        assert!(hits >= 190, "{hits}/200");
    }

    fn outcome_with_zeta(zeta: Complex64, nbar: f64) -> TrajectoryOutcome {
        TrajectoryOutcome {
            final_record: DyneRecord::default(),
            theta_hat: 0.0,
            true_phase: 0.0,
            wrapped_error: 0.0,
            zeta_diag: Some(ZetaDecomposition {
                nbar_est: nbar,
                zeta,
                n0: nbar * (2.0 * zeta.re).exp(),
            }),
            policy: FeedbackPolicy::MarkII,
            seed_path: SeedPath { master_seed: 0, index: 0 },
        }
    }

    #[test]
    fn scatter_at_optimum_is_zero() {
        let outs: Vec<_> = [100.0, 1e3, 1e4]
            .iter()
            .map(|&n| outcome_with_zeta(Complex64::new(optimal_zeta(n).unwrap(), 0.0), n))
            .collect();
        let s = zeta_scatter(&outs);
        assert_eq!(s.points.len(), 3);
        assert!(s.rms_dev_modulus < 1e-15);
        assert!(s.rms_dev_phase < 1e-15);
    }

    #[test]
    fn scatter_counts_below_and_skips() {
        let n = 1e4;
        let zo = optimal_zeta(n).unwrap();
        let mut outs = vec![
            outcome_with_zeta(Complex64::new(zo - 0.2, 0.0), n),
            outcome_with_zeta(Complex64::new(zo - 0.1, 0.0), n),
            outcome_with_zeta(Complex64::new(zo + 0.1, 0.0), n),
        ];
        let mut bad = outcome_with_zeta(Complex64::new(0.0, 0.0), n);
        bad.zeta_diag = None;
        outs.push(bad);
        let s = zeta_scatter(&outs);
        assert_eq!(s.skipped, 1);
        assert_relative_eq!(s.fraction_below, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s.rms_dev_modulus, (0.06f64 / 3.0).sqrt(), max_relative = 1e-10);
    }

    proptest! {
        #[test]
        fn holevo_invariant_under_reorder_and_rotation(
            xs in prop::collection::vec(-1.0f64..1.0, 2..200),
            rot in -PI..PI,
        ) {
            let h = holevo_variance(&xs).unwrap();
            let mut rev = xs.clone();
            rev.reverse();
            prop_assert!((holevo_variance(&rev).unwrap() - h).abs() <= 1e-10 * h.max(1e-12));
            // rotate estimates and truth together: errors are unchanged after wrapping
            let rotated: Vec<f64> = xs.iter().map(|&x| wrap_error(x + rot, rot)).collect();
            prop_assert!((holevo_variance(&rotated).unwrap() - h).abs() <= 1e-9 * h.max(1e-12));
        }

        #[test]
        fn fit_is_scale_equivariant(k in 0.01f64..100.0, p in 0.5f64..2.5, c in 0.01f64..10.0) {
            let pts: Vec<(f64, f64)> = [30.0f64, 100.0, 700.0, 5000.0].iter()
                .map(|&n| (n, c * n.powf(-p) * (1.0 + 0.03 * (n.ln()).sin()))).collect();
            let f = power_law_fit(&pts).unwrap();
            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(n, v)| (n, k * v)).collect();
            let g = power_law_fit(&scaled).unwrap();
            prop_assert!((g.exponent - f.exponent).abs() < 1e-10);
            prop_assert!((g.prefactor / f.prefactor / k - 1.0).abs() < 1e-10);
        }

        #[test]
        fn excess_is_even_and_quadratic(x in -2.0f64..2.0, n0 in 0.1f64..30.0) {
            let m = excess_from_modulus(x, n0).unwrap();
            prop_assert_eq!(m, excess_from_modulus(-x, n0).unwrap());
            prop_assert!((excess_from_modulus(2.0 * x, n0).unwrap() - 4.0 * m).abs() <= 1e-12 * m.max(1e-300));
            let p = excess_from_phase(x, n0).unwrap();
            prop_assert_eq!(p, excess_from_phase(-x, n0).unwrap());
            prop_assert!((excess_from_phase(2.0 * x, n0).unwrap() - 4.0 * p).abs() <= 1e-12 * p.max(1e-300));
        }
    }
}
