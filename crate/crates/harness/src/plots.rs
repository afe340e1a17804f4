//! Columnar `.dat` files plus a plain-text recipe describing how to draw them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use phasefeed_core::squeezed::{
    heterodyne_introduced, markII_introduced, optimal_zeta, theoretical_limit,
};
use phasefeed_core::stats::zeta_scatter_of;
use phasefeed_core::{Complex64, ZetaDecomposition};

use crate::error::{invalid, HarnessError, Result};
use crate::simulate::{ZetaSummary, TrajectoryRow};
use crate::sweep::{fit_rows, FitQuantity, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    VarianceVsNbar,
    Ratio,
    ZetaScatter,
    Contributions,
}

impl FromStr for PlotKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance-vs-nbar" => Ok(Self::VarianceVsNbar),
            "ratio" => Ok(Self::Ratio),
            "zeta-scatter" => Ok(Self::ZetaScatter),
            "contributions" => Ok(Self::Contributions),
            _ => Err(HarnessError::Usage(format!(
                "unknown plot kind {s:?}; expected variance-vs-nbar, ratio, zeta-scatter or contributions"
            ))),
        }
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.9e}")).unwrap_or_else(|| "nan".into())
}

fn write_file(path: &Path, text: &str) -> Result<PathBuf> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Introduced variance against photon number, with heterodyne, mark II, fitted
/// and theoretical-limit reference curves.
pub fn variance_vs_nbar(rows: &[SweepRow], out: &Path) -> Result<Vec<PathBuf>> {
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.status == "ok").collect();
    if ok.is_empty() {
        return Err(invalid("no successful sweep rows to plot"));
    }
    let mut data = String::from("# nbar introduced_var stderr total_var\n");
    for r in &ok {
        let _ = writeln!(
            data,
            "{:.9e} {:.9e} {} {:.9e}",
            r.nbar,
            r.introduced_var,
            fmt_opt(r.holevo_stderr),
            r.holevo_var
        );
    }
    let fit = fit_rows(rows, FitQuantity::Introduced).ok();
    let lo = ok.iter().map(|r| r.nbar).fold(f64::INFINITY, f64::min) / 2.0;
    let hi = ok.iter().map(|r| r.nbar).fold(0.0, f64::max) * 2.0;
    let mut refs = String::from("# nbar heterodyne mark2 fit limit\n");
    for n in log_grid(lo, hi, 60) {
        let _ = writeln!(
            refs,
            "{:.9e} {:.9e} {:.9e} {} {:.9e}",
            n,
            heterodyne_introduced(n)?,
            markII_introduced(n)?,
            fmt_opt(fit.as_ref().map(|f| f.eval(n))),
            theoretical_limit(n)?
        );
    }
    let fit_line = match &fit {
        Some(f) => format!(
            "fit: V = {:.4e} * nbar^-{:.4} (stderr of exponent {:.4})",
            f.prefactor, f.exponent, f.exponent_stderr
        ),
        None => "fit: unavailable (fewer than 3 positive points)".into(),
    };
    let recipe = format!(
        "variance-vs-nbar\n\
         x: nbar (column 1), log scale\n\
         y: introduced phase variance, log scale\n\
         points: variance-vs-nbar.dat columns 1:2 with error bars from column 3\n\
         curves, top to bottom: heterodyne (dashed, refs column 2), mark II (dash-dotted, column 3),\n\
         fit (solid, column 4), theoretical limit (dotted, column 5) from variance-vs-nbar.ref.dat\n\
         {fit_line}\n"
    );
    Ok(vec![
        write_file(&out.join("variance-vs-nbar.dat"), &data)?,
        write_file(&out.join("variance-vs-nbar.ref.dat"), &refs)?,
        write_file(&out.join("variance-vs-nbar.recipe.txt"), &recipe)?,
    ])
}

/// Total variance as a ratio to twice the intrinsic variance.
pub fn ratio(rows: &[SweepRow], out: &Path) -> Result<Vec<PathBuf>> {
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.status == "ok").collect();
    if ok.is_empty() {
        return Err(invalid("no successful sweep rows to plot"));
    }
    let mut data = String::from("# nbar ratio_to_limit stderr\n");
    for r in ok {
        let se = r.holevo_stderr.map(|s| s / (2.0 * r.intrinsic_var));
        let _ = writeln!(data, "{:.9e} {:.9e} {}", r.nbar, r.ratio_to_limit, fmt_opt(se));
    }
    let recipe = "ratio\n\
                  x: nbar (column 1), log scale\n\
                  y: phase variance / (2 x intrinsic variance), linear scale\n\
                  points: ratio.dat columns 1:2 with error bars from column 3\n\
                  reference: horizontal line y = 1\n";
    Ok(vec![
        write_file(&out.join("ratio.dat"), &data)?,
        write_file(&out.join("ratio.recipe.txt"), recipe)?,
    ])
}

/// Per-trajectory `(nbar_est, Re zeta)` with the optimal-zeta line.
pub fn zeta_scatter(rows: &[TrajectoryRow], out: &Path) -> Result<Vec<PathBuf>> {
    let scatter = zeta_scatter_of(rows.iter().map(decomposition));
    if scatter.points.is_empty() {
        return Err(invalid("no trajectories with a squeeze decomposition"));
    }
    let mut data = String::from("# nbar_est zeta_real zeta_arg zeta_opt\n");
    for p in &scatter.points {
        let _ = writeln!(
            data,
            "{:.9e} {:.9e} {:.9e} {:.9e}",
            p.nbar_est, p.zeta_real, p.zeta_arg, p.zeta_opt
        );
    }
    let lo = scatter.points.iter().map(|p| p.nbar_est).fold(f64::INFINITY, f64::min);
    let hi = scatter.points.iter().map(|p| p.nbar_est).fold(0.0, f64::max);
    let mut line = String::from("# nbar zeta_opt\n");
    for n in log_grid(lo.max(1.0), hi.max(lo.max(1.0) * 1.01), 60) {
        let _ = writeln!(line, "{:.9e} {:.9e}", n, optimal_zeta(n)?);
    }
    let recipe = format!(
        "zeta-scatter\n\
         x: nbar estimated from (A, B) (column 1), log scale\n\
         y: Re zeta (column 2), linear scale\n\
         points: zeta-scatter.dat columns 1:2\n\
         curve: zeta-scatter.line.dat, the optimum squeezing line\n\
         fraction below line: {:.4}; rms |zeta| deviation: {:.4e}; rms arg deviation: {:.4e}\n",
        scatter.fraction_below, scatter.rms_dev_modulus, scatter.rms_dev_phase
    );
    Ok(vec![
        write_file(&out.join("zeta-scatter.dat"), &data)?,
        write_file(&out.join("zeta-scatter.line.dat"), &line)?,
        write_file(&out.join("zeta-scatter.recipe.txt"), &recipe)?,
    ])
}

/// Excess-variance ratios from squeeze errors, one line per analysed run.
pub fn contributions(summaries: &[ZetaSummary], out: &Path) -> Result<Vec<PathBuf>> {
    if summaries.is_empty() {
        return Err(invalid("no squeeze summaries to plot"));
    }
    let mut sorted: Vec<&ZetaSummary> = summaries.iter().collect();
    sorted.sort_by(|a, b| a.nbar.total_cmp(&b.nbar));
    let mut data = String::from("# nbar excess_modulus excess_phase\n");
    for s in sorted {
        let _ = writeln!(
            data,
            "{:.9e} {} {}",
            s.nbar,
            fmt_opt(s.excess_modulus),
            fmt_opt(s.excess_phase)
        );
    }
    let recipe = "contributions\n\
                  x: nbar (column 1), log scale\n\
                  y: excess variance as a ratio to the minimum introduced variance, linear scale\n\
                  curves: modulus error (solid, column 2), phase error (dash-dotted, column 3)\n";
    Ok(vec![
        write_file(&out.join("contributions.dat"), &data)?,
        write_file(&out.join("contributions.recipe.txt"), recipe)?,
    ])
}

/// Squeeze decomposition of a CSV row, if the trajectory had one.
pub fn decomposition(r: &TrajectoryRow) -> Option<ZetaDecomposition> {
    Some(ZetaDecomposition {
        nbar_est: r.nbar_est?,
        zeta: Complex64::new(r.zeta_re?, r.zeta_im?),
        n0: r.n0?,
    })
}
