//! Simulation configuration: a TOML file plus command-line overrides.
//!
//! ```toml
//! schema_version = 1
//! nbar = 1577
//! dv_feedback = "paper-rule"   # or "paper-rule/100", or a number
//! n_trajectories = 20000
//! master_seed = 1
//!
//! [policy]
//! kind = "time-eps"
//! divisor = 1.0
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use phasefeed_core::ensemble::PhaseMode;
use phasefeed_core::sde::paper_rule_dv;
use phasefeed_core::squeezed::{intrinsic_phase_variance, make_optimal_squeezed, mean_photon};
use phasefeed_core::{Complex64, EnsembleConfig, FeedbackPolicy, SqueezedState, TimeGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StateKind {
    /// Coherent state with real amplitude `sqrt(nbar)`.
    Coherent,
    /// Phase-squeezed state at the asymptotically optimal `n0` for `nbar`.
    #[default]
    OptimalSqueezed,
    /// Explicit `(alpha, xi)` as `[re, im]` pairs; `nbar` is derived from them.
    Custom { alpha: [f64; 2], xi: [f64; 2] },
}

/// Feedback interval: a fixed value or the photon-number rule, optionally
/// refined by an integer-like factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DvSetting {
    PaperRule { refine: f64 },
    Fixed(f64),
}

impl Default for DvSetting {
    fn default() -> Self {
        Self::PaperRule { refine: 1.0 }
    }
}

impl DvSetting {
    pub fn resolve(&self, nbar: f64) -> Result<f64> {
        match *self {
            Self::PaperRule { refine } => Ok(paper_rule_dv(nbar)? / refine),
            Self::Fixed(dv) => Ok(dv),
        }
    }
}

impl fmt::Display for DvSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::PaperRule { refine: 1.0 } => write!(f, "paper-rule"),
            Self::PaperRule { refine } => write!(f, "paper-rule/{refine}"),
            Self::Fixed(dv) => write!(f, "{dv}"),
        }
    }
}

impl FromStr for DvSetting {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        // "paper" is accepted as a short alias.
        if let Some(rest) = s.strip_prefix("paper-rule").or_else(|| s.strip_prefix("paper")) {
            let refine = match rest.strip_prefix('/') {
                None if rest.is_empty() => 1.0,
                Some(r) => r
                    .parse::<f64>()
                    .map_err(|_| HarnessError::Usage(format!("bad dv refinement {r:?}")))?,
                None => return Err(HarnessError::Usage(format!("bad dv setting {s:?}"))),
            };
            if !(refine >= 1.0 && refine.is_finite()) {
                return Err(invalid(format!("dv refinement {refine} must be >= 1")));
            }
            return Ok(Self::PaperRule { refine });
        }
        s.parse::<f64>()
            .map(Self::Fixed)
            .map_err(|_| HarnessError::Usage(format!("dv must be a number or \"paper-rule[/k]\", got {s:?}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DvRepr {
    Text(String),
    Value(f64),
}

impl Serialize for DvSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Fixed(dv) => DvRepr::Value(*dv),
            rule => DvRepr::Text(rule.to_string()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DvSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match DvRepr::deserialize(d)? {
            DvRepr::Value(v) => Ok(Self::Fixed(v)),
            DvRepr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    /// Directory for `summary.json`, `trajectories.csv` and `trace.txt`.
    pub dir: Option<PathBuf>,
    pub trajectories_csv: bool,
    /// Number of leading trajectories to trace step by step (0 = none).
    pub trace: usize,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            dir: None,
            trajectories_csv: true,
            trace: 0,
        }
    }
}

fn schema_default() -> u32 {
    SCHEMA_VERSION
}

fn one() -> usize {
    1
}

fn v_end_default() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "schema_default")]
    pub schema_version: u32,
    #[serde(default)]
    pub nbar: f64,
    #[serde(default)]
    pub state: StateKind,
    pub policy: FeedbackPolicy,
    #[serde(default)]
    pub dv_feedback: DvSetting,
    #[serde(default = "one")]
    pub substeps: usize,
    #[serde(default = "v_end_default")]
    pub v_end: f64,
    #[serde(default = "one")]
    pub n_trajectories: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub true_phase_mode: PhaseMode,
    /// Worker threads, 0 for one per core. Never affects results.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub outputs: Outputs,
}

impl SimConfig {
    pub fn new(nbar: f64, policy: FeedbackPolicy, n_trajectories: usize, master_seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            nbar,
            state: StateKind::OptimalSqueezed,
            policy,
            dv_feedback: DvSetting::default(),
            substeps: 1,
            v_end: 1.0,
            n_trajectories,
            master_seed,
            true_phase_mode: PhaseMode::Zero,
            workers: 0,
            outputs: Outputs::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        toml::from_str(&text).map_err(|e| HarnessError::format(path, e))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n_trajectories == 0 {
            return Err(invalid("n_trajectories must be >= 1"));
        }
        if !matches!(self.state, StateKind::Custom { .. }) && !(self.nbar > 0.0 && self.nbar.is_finite()) {
            return Err(invalid(format!("nbar must be positive, got {}", self.nbar)));
        }
        let dv = self.dv()?;
        if !(dv > 0.0 && dv < 1.0) {
            return Err(invalid(format!("dv_feedback {dv} not in (0, 1)")));
        }
        self.policy.validate()?;
        self.grid()?;
        self.initial_state()?;
        Ok(())
    }

    /// Mean photon number of the input, derived from the state for custom inputs.
    pub fn effective_nbar(&self) -> Result<f64> {
        match self.state {
            StateKind::Custom { .. } => Ok(mean_photon(&self.initial_state()?)),
            _ => Ok(self.nbar),
        }
    }

    pub fn dv(&self) -> Result<f64> {
        self.dv_feedback.resolve(self.effective_nbar()?)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.dv()?, self.substeps, self.v_end)?)
    }

    pub fn initial_state(&self) -> Result<SqueezedState> {
        Ok(match self.state {
            StateKind::Coherent => SqueezedState::coherent(Complex64::new(self.nbar.sqrt(), 0.0)),
            StateKind::OptimalSqueezed => make_optimal_squeezed(self.nbar)?,
            StateKind::Custom { alpha, xi } => SqueezedState::new(
                Complex64::new(alpha[0], alpha[1]),
                Complex64::new(xi[0], xi[1]),
            )?,
        })
    }

    /// `n0 = nbar e^{2 Re zeta}` of the input state.
    pub fn input_n0(&self) -> Result<f64> {
        let s = self.initial_state()?;
        let nbar = mean_photon(&s);
        let zeta = if s.alpha.norm() == 0.0 {
            s.xi
        } else {
            s.xi * s.alpha.conj() / s.alpha
        };
        Ok(nbar * (2.0 * zeta.re).exp())
    }

    /// Intrinsic phase variance of the input state.
    pub fn intrinsic_variance(&self) -> Result<f64> {
        Ok(intrinsic_phase_variance(self.effective_nbar()?, self.input_n0()?)?)
    }

    pub fn ensemble(&self) -> Result<EnsembleConfig> {
        self.validate()?;
        Ok(EnsembleConfig {
            initial: self.initial_state()?,
            policy: self.policy,
            grid: self.grid()?,
            n_trajectories: self.n_trajectories,
            master_seed: self.master_seed,
            phase_mode: self.true_phase_mode,
            workers: self.workers,
        })
    }

    /// SHA-256 over everything that can influence the numbers. Worker count and
    /// output locations are excluded.
    pub fn hash(&self) -> String {
        let mut key = self.clone();
        key.workers = 0;
        key.outputs = Outputs::default();
        let json = serde_json::to_string(&key).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.hash(),
            seed: self.master_seed,
            version: VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

/// Parses `NAME[:params]`, e.g. `time-eps:divisor=1.1`, `const-eps:0.4` or
/// `corrected:lambda=1e-3,divisor=1`. A bare value sets the policy's main
/// parameter.
pub fn parse_policy(spec: &str) -> Result<FeedbackPolicy> {
    let usage = |m: String| HarnessError::Usage(m);
    let (name, params) = match spec.split_once(':') {
        Some((n, p)) => (n.trim(), p.trim()),
        None => (spec.trim(), ""),
    };
    let mut pairs: Vec<(String, f64)> = Vec::new();
    for item in params.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = match item.split_once('=') {
            Some((k, v)) => (k.trim().replace('-', "_"), v.trim()),
            None => (String::new(), item),
        };
        let x = v
            .parse::<f64>()
            .map_err(|_| usage(format!("policy parameter {item:?} is not numeric")))?;
        pairs.push((k, x));
    }
    let mut take = |key: &str, primary: bool| -> Option<f64> {
        let i = pairs
            .iter()
            .position(|(k, _)| k == key || (primary && k.is_empty()))?;
        Some(pairs.remove(i).1)
    };
    let policy = match name.to_ascii_lowercase().as_str() {
        "heterodyne" | "het" => FeedbackPolicy::Heterodyne {
            detuning: take("detuning", true)
                .unwrap_or(phasefeed_core::policy::DEFAULT_HETERODYNE_DETUNING),
        },
        "mark1" | "mark-i" | "marki" => FeedbackPolicy::MarkI,
        "mark2" | "mark-ii" | "markii" => FeedbackPolicy::MarkII,
        "const-eps" | "constant-epsilon" => FeedbackPolicy::ConstantEpsilon {
            epsilon: take("epsilon", true)
                .ok_or_else(|| usage("const-eps needs an epsilon".into()))?,
        },
        "time-eps" | "time-epsilon" => FeedbackPolicy::TimeEpsilon {
            divisor: take("divisor", true).unwrap_or(1.0),
            epsilon_max: take("epsilon_max", false),
        },
        "corrected" => FeedbackPolicy::Corrected {
            lambda: take("lambda", true).unwrap_or(1e-3),
            divisor: take("divisor", false).unwrap_or(1.0),
            onset_v: take("onset_v", false).unwrap_or(phasefeed_core::policy::DEFAULT_ONSET_V),
            epsilon_max: take("epsilon_max", false),
        },
        other => {
            return Err(usage(format!(
                "unknown policy {other:?}; expected heterodyne, mark1, mark2, const-eps, time-eps or corrected"
            )))
        }
    };
    if let Some((k, x)) = pairs.first() {
        return Err(usage(if k.is_empty() {
            format!("extra unnamed value {x} for {name}; name it, e.g. divisor={x}")
        } else {
            format!("unexpected parameter {k:?} for {name}")
        }));
    }
    policy.validate()?;
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_fills_defaults() {
        let cfg = SimConfig::from_toml_str(
            "nbar = 1577\nn_trajectories = 10\n[policy]\nkind = \"time-eps\"\ndivisor = 1\n",
        )
        .unwrap();
        assert_eq!(cfg.schema_version, SCHEMA_VERSION);
        assert_eq!(cfg.dv_feedback, DvSetting::PaperRule { refine: 1.0 });
        assert_eq!(cfg.state, StateKind::OptimalSqueezed);
        assert_eq!(cfg.policy, FeedbackPolicy::time_epsilon(1.0));
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = SimConfig::new(400.0, FeedbackPolicy::corrected(1e-3, 1.1), 50, 7);
        cfg.dv_feedback = DvSetting::PaperRule { refine: 100.0 };
        cfg.state = StateKind::Custom {
            alpha: [3.0, 1.0],
            xi: [-0.4, 0.1],
        };
        let back = SimConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        cfg.dv_feedback = DvSetting::Fixed(2.5e-4);
        let back = SimConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn policy_tags_match_names() {
        for p in [
            FeedbackPolicy::heterodyne(),
            FeedbackPolicy::MarkI,
            FeedbackPolicy::MarkII,
            FeedbackPolicy::ConstantEpsilon { epsilon: 0.5 },
            FeedbackPolicy::time_epsilon(1.0),
            FeedbackPolicy::corrected(1e-3, 1.0),
        ] {
            let json = serde_json::to_value(p).unwrap();
            assert_eq!(json["kind"], p.name());
            if !matches!(p, FeedbackPolicy::ConstantEpsilon { .. }) {
                assert_eq!(parse_policy(p.name()).unwrap(), p);
            }
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = SimConfig::from_toml_str("nbar = 1\nbogus = 2\n[policy]\nkind = \"mark2\"\n");
        assert!(matches!(err, Err(HarnessError::Validation(_))));
    }

    #[test]
    fn policy_specs_parse() {
        assert_eq!(parse_policy("mark2").unwrap(), FeedbackPolicy::MarkII);
        assert_eq!(
            parse_policy("const-eps:0.4").unwrap(),
            FeedbackPolicy::ConstantEpsilon { epsilon: 0.4 }
        );
        assert_eq!(
            parse_policy("time-eps:divisor=1.2").unwrap(),
            FeedbackPolicy::time_epsilon(1.2)
        );
        assert_eq!(
            parse_policy("corrected:lambda=5e-4,divisor=1.1").unwrap(),
            FeedbackPolicy::corrected(5e-4, 1.1)
        );
        assert!(matches!(parse_policy("mark3"), Err(HarnessError::Usage(_))));
        assert!(matches!(parse_policy("const-eps"), Err(HarnessError::Usage(_))));
        assert!(matches!(parse_policy("mark2:foo=1"), Err(HarnessError::Usage(_))));
        assert!(parse_policy("const-eps:1.5").is_err());
    }

    #[test]
    fn dv_settings_parse() {
        assert_eq!("paper".parse::<DvSetting>().unwrap(), DvSetting::PaperRule { refine: 1.0 });
        assert_eq!(
            "paper/1000".parse::<DvSetting>().unwrap(),
            DvSetting::PaperRule { refine: 1000.0 }
        );
        assert_eq!("1e-4".parse::<DvSetting>().unwrap(), DvSetting::Fixed(1e-4));
        assert!("papers".parse::<DvSetting>().is_err());
        assert!("paper/0.5".parse::<DvSetting>().is_err());
        for text in ["paper-rule", "paper-rule/100", "0.001"] {
            let d: DvSetting = text.parse().unwrap();
            assert_eq!(d.to_string(), text);
        }
        assert!("paper-rules".parse::<DvSetting>().is_err());
    }

    #[test]
    fn hash_ignores_workers_and_outputs() {
        let a = SimConfig::new(100.0, FeedbackPolicy::MarkII, 10, 3);
        let mut b = a.clone();
        b.workers = 8;
        b.outputs.dir = Some("/tmp/x".into());
        assert_eq!(a.hash(), b.hash());
        b.master_seed = 4;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = SimConfig::new(100.0, FeedbackPolicy::MarkII, 0, 1);
        assert!(c.validate().is_err());
        c.n_trajectories = 1;
        c.validate().unwrap();
        c.dv_feedback = DvSetting::Fixed(1.5);
        assert!(c.validate().is_err());
        c.dv_feedback = DvSetting::Fixed(1e-3);
        c.nbar = -1.0;
        assert!(c.validate().is_err());
        c.nbar = 100.0;
        c.schema_version = 99;
        assert!(c.validate().is_err());
    }

    #[test]
    fn coherent_input_has_unsqueezed_n0() {
        let mut c = SimConfig::new(100.0, FeedbackPolicy::heterodyne(), 1, 1);
        c.state = StateKind::Coherent;
        assert!((c.input_n0().unwrap() - 100.0).abs() < 1e-9);
        c.state = StateKind::OptimalSqueezed;
        let n0 = phasefeed_core::squeezed::optimal_n0(100.0).unwrap();
        assert!((c.input_n0().unwrap() - n0).abs() < 1e-9 * n0);
    }
}
