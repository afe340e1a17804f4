use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phasefeed::config::{parse_policy, DvSetting, SimConfig, StateKind};
use phasefeed::error::{HarnessError, Result};
use phasefeed::plots::{self, PlotKind};
use phasefeed::presets::{self, RunOptions};
use phasefeed::simulate::{self, TrajectoryRow, ZetaSummary};
use phasefeed::sweep::{self, FitQuantity, SweepRow, SweepSpec};
use phasefeed_core::ensemble::PhaseMode;
use phasefeed_core::sde::paper_rule_dv;
use phasefeed_core::squeezed as sq;
use phasefeed_core::stats::zeta_scatter_of;
use serde_json::json;

#[derive(Parser)]
#[command(name = "phasefeed", version, about = "Adaptive dyne phase measurement simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form limits and reference variances at one photon number.
    Limits {
        #[arg(long)]
        nbar: f64,
        /// Detector efficiency for the efficiency floor and mark II crossover.
        #[arg(long, default_value_t = 0.98)]
        eta: f64,
    },
    /// Run one ensemble.
    Simulate(SimArgs),
    /// Run a photon-number sweep described by a TOML file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Power-law fit to a sweep CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// `introduced` (total minus intrinsic) or `total`.
        #[arg(long, default_value = "introduced")]
        quantity: String,
    },
    /// Squeeze-parameter scatter of a trajectories CSV.
    AnalyzeZeta {
        #[arg(long)]
        input: PathBuf,
        /// Photon number for the excess ratios; defaults to the mean estimate.
        #[arg(long)]
        nbar: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a canned experiment and compare it with its pinned target.
    Reproduce {
        /// Preset name; omit with --list.
        name: Option<String>,
        #[arg(long)]
        list: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write plot data files and drawing recipes.
    EmitPlots {
        /// variance-vs-nbar, ratio, zeta-scatter or contributions.
        #[arg(long)]
        kind: String,
        /// Sweep CSV, trajectories CSV, or squeeze summaries for contributions.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "PHASEFEED_WORKERS")]
    workers: Option<usize>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nbar: Option<f64>,
    /// NAME[:params], e.g. time-eps:divisor=1.1 or const-eps:0.4.
    #[arg(long)]
    policy: Option<String>,
    /// A number, `paper-rule`, or `paper-rule/K` for the photon-number rule divided by K.
    #[arg(long)]
    dv: Option<String>,
    #[arg(long)]
    substeps: Option<usize>,
    /// coherent or optimal-squeezed.
    #[arg(long)]
    state: Option<String>,
    /// Draw each trajectory's true phase uniformly instead of fixing it at 0.
    #[arg(long)]
    random_phase: bool,
    /// Write step-by-step traces of the first N trajectories (default 1).
    #[arg(long, num_args = 0..=1, default_missing_value = "1")]
    trace: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Limits { nbar, eta } => limits(nbar, eta),
        Command::Simulate(args) => simulate_cmd(args),
        Command::Sweep { config, common } => sweep_cmd(&config, common),
        Command::Fit { input, quantity } => fit_cmd(&input, &quantity),
        Command::AnalyzeZeta { input, nbar, out } => analyze_zeta(&input, nbar, out.as_deref()),
        Command::Reproduce { name, list, common } => reproduce(name, list, common),
        Command::EmitPlots { kind, input, out } => emit_plots(&kind, &input, &out),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn limits(nbar: f64, eta: f64) -> Result<()> {
    let n0 = sq::optimal_n0(nbar)?;
    let crossover = sq::markii_efficiency_crossover(eta, 1.0, 1e9).ok();
    print_json(&json!({
        "nbar": nbar,
        "optimal_n0": n0,
        "optimal_zeta": sq::optimal_zeta(nbar).ok(),
        "intrinsic_var": sq::intrinsic_phase_variance(nbar, n0).ok(),
        "theoretical_limit": sq::theoretical_limit(nbar)?,
        "markii_introduced": sq::markII_introduced(nbar)?,
        "heterodyne_introduced": sq::heterodyne_introduced(nbar)?,
        "eta": eta,
        "efficiency_floor": sq::efficiency_floor(eta, nbar)?,
        "markii_crossover_nbar": crossover,
        "paper_rule_dv": paper_rule_dv(nbar)?,
    }));
    Ok(())
}

fn build_config(args: &SimArgs) -> Result<SimConfig> {
    let mut cfg = match &args.config {
        Some(path) => SimConfig::load(path)?,
        None => {
            let (Some(nbar), Some(policy)) = (args.nbar, &args.policy) else {
                return Err(HarnessError::Usage(
                    "simulate needs --config, or both --nbar and --policy".into(),
                ));
            };
            SimConfig::new(nbar, parse_policy(policy)?, 1000, presets::PRESET_SEED)
        }
    };
    if let Some(n) = args.nbar {
        cfg.nbar = n;
    }
    if let Some(p) = &args.policy {
        cfg.policy = parse_policy(p)?;
    }
    if let Some(dv) = &args.dv {
        cfg.dv_feedback = dv.parse::<DvSetting>()?;
    }
    if let Some(s) = args.substeps {
        cfg.substeps = s;
    }
    if let Some(s) = &args.state {
        cfg.state = match s.as_str() {
            "coherent" => StateKind::Coherent,
            "optimal-squeezed" => StateKind::OptimalSqueezed,
            other => return Err(HarnessError::Usage(format!("unknown state {other:?}"))),
        };
    }
    if args.random_phase {
        cfg.true_phase_mode = PhaseMode::UniformRandom;
    }
    if let Some(t) = args.trace {
        cfg.outputs.trace = t;
    }
    apply_common(&mut cfg, &args.common);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_common(cfg: &mut SimConfig, common: &CommonArgs) {
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if let Some(n) = common.trajectories {
        cfg.n_trajectories = n;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(o) = &common.out {
        cfg.outputs.dir = Some(o.clone());
    }
}

fn simulate_cmd(args: SimArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let run = simulate::simulate(&cfg)?;
    let s = &run.summary;
    match &cfg.outputs.dir {
        Some(dir) => {
            simulate::write_outputs(&run, dir)?;
            eprintln!("wrote {}", dir.display());
        }
        None => {
            if cfg.outputs.trace > 0 {
                return Err(HarnessError::Usage("--trace needs --out".into()));
            }
        }
    }
    print_json(&json!({
        "nbar": s.reference.nbar,
        "policy": cfg.policy.name(),
        "params": cfg.policy.params(),
        "n_traj": cfg.n_trajectories,
        "holevo_var": s.stats.holevo_variance,
        "holevo_stderr": s.stats.stderr_holevo,
        "wrapped_var": s.stats.wrapped_variance,
        "failed_count": s.stats.failed_count,
        "intrinsic_var": s.reference.intrinsic_var,
        "ratio_to_limit": s.reference.ratio_to_limit,
        "config_hash": s.provenance.config_hash,
        "seed": s.provenance.seed,
        "version": s.provenance.version,
    }));
    Ok(())
}

fn sweep_cmd(path: &Path, common: CommonArgs) -> Result<()> {
    let mut spec = SweepSpec::load(path)?;
    apply_common(&mut spec.base, &common);
    let rows = sweep::run_sweep(&spec)?;
    match &common.out {
        Some(dir) => {
            simulate::ensure_dir(dir)?;
            let p = dir.join("sweep.csv");
            simulate::write_csv(&p, &rows)?;
            eprintln!("wrote {}", p.display());
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for r in &rows {
                w.serialize(r).map_err(|e| HarnessError::format(Path::new("<stdout>"), e))?;
            }
            w.flush().map_err(|e| HarnessError::io(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

fn fit_cmd(input: &Path, quantity: &str) -> Result<()> {
    let q = match quantity {
        "introduced" => FitQuantity::Introduced,
        "total" => FitQuantity::Total,
        other => return Err(HarnessError::Usage(format!("unknown quantity {other:?}"))),
    };
    let rows: Vec<SweepRow> = simulate::read_csv(input)?;
    let fit = sweep::fit_rows(&rows, q)?;
    print_json(&serde_json::to_value(fit).expect("json"));
    Ok(())
}

fn analyze_zeta(input: &Path, nbar: Option<f64>, out: Option<&Path>) -> Result<()> {
    let rows: Vec<TrajectoryRow> = simulate::read_csv(input)?;
    let scatter = zeta_scatter_of(rows.iter().map(plots::decomposition));
    if scatter.points.is_empty() {
        return Err(HarnessError::Validation(format!(
            "{}: no rows with a squeeze decomposition",
            input.display()
        )));
    }
    let nbar = nbar.unwrap_or_else(|| {
        scatter.points.iter().map(|p| p.nbar_est).sum::<f64>() / scatter.points.len() as f64
    });
    let summary = simulate::zeta_summary(&scatter, nbar);
    if let Some(dir) = out {
        simulate::ensure_dir(dir)?;
        simulate::write_csv(&dir.join("zeta-scatter.csv"), &scatter.points)?;
        simulate::write_json(&dir.join("zeta-summary.json"), &summary)?;
    }
    print_json(&serde_json::to_value(&summary).expect("json"));
    Ok(())
}

fn reproduce(name: Option<String>, list: bool, common: CommonArgs) -> Result<()> {
    if list {
        for n in presets::names() {
            println!("{n:22} {}", presets::describe(n).unwrap_or_default());
        }
        return Ok(());
    }
    let Some(name) = name else {
        return Err(HarnessError::Usage(format!(
            "reproduce needs a preset name; available: {}",
            presets::names().join(", ")
        )));
    };
    let opts = RunOptions {
        workers: common.workers.unwrap_or(0),
        seed: common.seed.unwrap_or(presets::PRESET_SEED),
        trajectories: common.trajectories,
        out: common.out.clone(),
    };
    let report = presets::run_preset(&name, &opts)?;
    println!("{}", report.render());
    if let Some(dir) = &common.out {
        simulate::ensure_dir(dir)?;
        simulate::write_json(&dir.join(format!("{name}.report.json")), &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(HarnessError::Tolerance(name))
    }
}

fn emit_plots(kind: &str, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let kind: PlotKind = kind.parse()?;
    simulate::ensure_dir(out)?;
    let files = match kind {
        PlotKind::VarianceVsNbar | PlotKind::Ratio => {
            let mut rows: Vec<SweepRow> = Vec::new();
            for p in inputs {
                rows.extend(simulate::read_csv::<SweepRow>(p)?);
            }
            if kind == PlotKind::Ratio {
                plots::ratio(&rows, out)?
            } else {
                plots::variance_vs_nbar(&rows, out)?
            }
        }
        PlotKind::ZetaScatter => {
            let mut rows: Vec<TrajectoryRow> = Vec::new();
            for p in inputs {
                rows.extend(simulate::read_csv::<TrajectoryRow>(p)?);
            }
            plots::zeta_scatter(&rows, out)?
        }
        PlotKind::Contributions => {
            let mut summaries: Vec<ZetaSummary> = Vec::new();
            for p in inputs {
                let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                summaries.push(serde_json::from_str(&text).map_err(|e| HarnessError::format(p, e))?);
            }
            plots::contributions(&summaries, out)?
        }
    };
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}
