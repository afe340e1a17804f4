//! Squeezed-state algebra and the closed-form phase-variance limits.
//!
//! A squeezed state `|alpha, xi>` is displaced vacuum squeezed by `xi`. The same
//! state is annihilated by `a - B a^dagger - A`, and the pair `(A, B)` (the
//! "linear form") is what the conditioned dynamics evolves. The POM of any dyne
//! measurement projects onto squeezed states labelled by the record `(A, B)`, so
//! the same mapping turns a finished record into the squeeze parameters that
//! control the measured phase distribution.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{domain, Error, Result};

/// Offset in the asymptotic minimum introduced variance `(ln n + DELTA) / (4 n^2)`.
pub const DELTA: f64 = 2.43;

/// Largest accepted `|B|`; closer to the unit circle is treated as infinite squeezing.
pub const MAX_B_MODULUS: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezedState {
    pub alpha: Complex64,
    pub xi: Complex64,
}

impl SqueezedState {
    pub fn new(alpha: Complex64, xi: Complex64) -> Result<Self> {
        let state = Self { alpha, xi };
        state.validate()?;
        Ok(state)
    }

    pub fn coherent(alpha: Complex64) -> Self {
        Self {
            alpha,
            xi: Complex64::new(0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, x) in [
            ("alpha.re", self.alpha.re),
            ("alpha.im", self.alpha.im),
            ("xi.re", self.xi.re),
            ("xi.im", self.xi.im),
        ] {
            if !x.is_finite() {
                return Err(domain(what, x));
            }
        }
        let n = mean_photon(self);
        if !n.is_finite() {
            return Err(domain("mean photon number", n));
        }
        Ok(())
    }

    /// The same state with its phase advanced by `phase`: `alpha -> alpha e^{i phase}`,
    /// `xi -> xi e^{2 i phase}`. `zeta = xi alpha* / alpha` is unchanged.
    pub fn rotated(&self, phase: f64) -> Self {
        let r = Complex64::from_polar(1.0, phase);
        Self {
            alpha: self.alpha * r,
            xi: self.xi * r * r,
        }
    }
}

/// `(A^S, B^S)` such that `(a - B^S a^dagger - A^S)|alpha, xi> = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFormParams {
    pub a_lin: Complex64,
    pub b_lin: Complex64,
}

/// Squeeze parameters read off a record, with the amplitude phase scaled out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaDecomposition {
    pub nbar_est: f64,
    /// `zeta = xi alpha* / alpha`; real and negative for phase-squeezed states.
    pub zeta: Complex64,
    /// `nbar * exp(2 Re zeta)`.
    pub n0: f64,
}

fn check_positive(what: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(domain(what, x))
    }
}

pub fn mean_photon(state: &SqueezedState) -> f64 {
    let s = state.xi.norm().sinh();
    state.alpha.norm_sqr() + s * s
}

/// Asymptotically optimal `n0` for minimum intrinsic phase variance at mean
/// photon number `nbar`. Only meaningful for large `nbar`; at `nbar ~ 1` it is
/// merely a number.
pub fn optimal_n0(nbar: f64) -> Result<f64> {
    check_positive("nbar", nbar)?;
    Ok((4.0 * nbar).ln() - 0.25 * (2.0 * PI).ln())
}

/// Phase variance of a squeezed state with real `zeta`, `n0 = nbar e^{2 zeta}`.
pub fn intrinsic_phase_variance(nbar: f64, n0: f64) -> Result<f64> {
    check_positive("nbar", nbar)?;
    check_positive("n0", n0)?;
    Ok((n0 + 1.0) / (4.0 * nbar * nbar) + 2.0 * erfc((2.0 * n0).sqrt()))
}

/// Minimum phase variance any dyne scheme can introduce, `(ln nbar + DELTA) / (4 nbar^2)`.
pub fn theoretical_limit(nbar: f64) -> Result<f64> {
    check_positive("nbar", nbar)?;
    Ok((nbar.ln() + DELTA) / (4.0 * nbar * nbar))
}

/// Introduced variance of mark II adaptive detection, `nbar^-1.5 / 8`.
#[allow(non_snake_case)]
pub fn markII_introduced(nbar: f64) -> Result<f64> {
    check_positive("nbar", nbar)?;
    Ok(0.125 * nbar.powf(-1.5))
}

/// Introduced variance of heterodyne detection, `1 / (4 nbar)`.
pub fn heterodyne_introduced(nbar: f64) -> Result<f64> {
    check_positive("nbar", nbar)?;
    Ok(0.25 / nbar)
}

/// Floor on introduced variance for detector efficiency `eta`.
pub fn efficiency_floor(eta: f64, nbar: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(domain("eta", eta));
    }
    check_positive("nbar", nbar)?;
    Ok((1.0 - eta) / (4.0 * eta * nbar))
}

/// Photon number above which mark II beats the efficiency floor, found by
/// bisection on `ln nbar` over `[lo, hi]`.
pub fn markii_efficiency_crossover(eta: f64, lo: f64, hi: f64) -> Result<f64> {
    let gap = |n: f64| -> Result<f64> { Ok(markII_introduced(n)? - efficiency_floor(eta, n)?) };
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let ga = gap(lo)?;
    let gb = gap(hi)?;
    if ga.signum() == gb.signum() {
        return Err(Error::Invalid(format!(
            "crossover not bracketed by [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if gap(m.exp())?.signum() == ga.signum() {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-14 {
            break;
        }
    }
    Ok((0.5 * (a + b)).exp())
}

/// Squeezed state with real positive amplitude and real negative `zeta` whose
/// `n0` is [`optimal_n0`] and whose total mean photon number is `nbar`.
///
/// With `nbar` held fixed as the total, `zeta = ln(n0 / nbar) / 2` is explicit
/// and the amplitude takes the remaining photons.
pub fn make_optimal_squeezed(nbar: f64) -> Result<SqueezedState> {
    let n0 = optimal_n0(nbar)?;
    if n0 <= 0.0 {
        return Err(domain("nbar (optimal n0 not positive)", nbar));
    }
    let zeta = if n0 >= nbar { 0.0 } else { 0.5 * (n0 / nbar).ln() };
    let s = zeta.sinh();
    let alpha2 = nbar - s * s;
    if alpha2 <= 0.0 {
        return Err(domain("nbar (no photons left for the amplitude)", nbar));
    }
    Ok(SqueezedState {
        alpha: Complex64::new(alpha2.sqrt(), 0.0),
        xi: Complex64::new(zeta, 0.0),
    })
}

pub fn to_linear_form(state: &SqueezedState) -> LinearFormParams {
    let r = state.xi.norm();
    let b_lin = if r == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        -(state.xi / r) * r.tanh()
    };
    let (al, b) = (state.alpha, b_lin);
    LinearFormParams {
        a_lin: Complex64::new(
            dot2(&[(al.re, 1.0), (-b.re, al.re), (-b.im, al.im)]),
            dot2(&[(al.im, 1.0), (-b.im, al.re), (b.re, al.im)]),
        ),
        b_lin,
    }
}

// The linear-form map loses about 1/(1 - |B|) in relative accuracy, so the
// cancelling sums are evaluated with error-free transformations.
fn dot2(terms: &[(f64, f64)]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &(x, y) in terms {
        let p = x * y;
        let ep = x.mul_add(y, -p);
        let t = s + p;
        let z = t - s;
        let es = (s - (t - z)) + (p - z);
        s = t;
        c += ep + es;
    }
    s + c
}

/// `alpha = (A + B A*) / (1 - |B|^2)`, `xi = -B atanh|B| / |B|`.
fn squeeze_from_ab(a: Complex64, b: Complex64) -> Result<(Complex64, Complex64)> {
    let bm = b.norm();
    if !(bm <= MAX_B_MODULUS) {
        return Err(domain("|B|", bm));
    }
    let num = Complex64::new(
        dot2(&[(a.re, 1.0), (b.re, a.re), (b.im, a.im)]),
        dot2(&[(a.im, 1.0), (b.im, a.re), (-b.re, a.im)]),
    );
    let alpha = num / dot2(&[(1.0, 1.0), (-b.re, b.re), (-b.im, b.im)]);
    let xi = if bm == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        -(b / bm) * bm.atanh()
    };
    Ok((alpha, xi))
}

pub fn from_linear_form(params: &LinearFormParams) -> Result<SqueezedState> {
    let (alpha, xi) = squeeze_from_ab(params.a_lin, params.b_lin)?;
    Ok(SqueezedState { alpha, xi })
}

/// Squeeze decomposition of the POM state selected by a final record `(A, B)`.
pub fn zeta_from_record(a: Complex64, b: Complex64) -> Result<ZetaDecomposition> {
    let (alpha, xi) = squeeze_from_ab(a, b)?;
    if alpha.norm() == 0.0 {
        return Err(Error::UndefinedPhase);
    }
    let zeta = xi * alpha.conj() / alpha;
    let s = xi.norm().sinh();
    let nbar_est = alpha.norm_sqr() + s * s;
    Ok(ZetaDecomposition {
        nbar_est,
        zeta,
        n0: nbar_est * (2.0 * zeta.re).exp(),
    })
}

/// `zeta` of the optimal squeezed state at `nbar`, i.e. `ln(n0_opt / nbar) / 2`.
pub fn optimal_zeta(nbar: f64) -> Result<f64> {
    let n0 = optimal_n0(nbar)?;
    if n0 <= 0.0 {
        return Err(domain("nbar (optimal n0 not positive)", nbar));
    }
    Ok(0.5 * (n0 / nbar).ln())
}
