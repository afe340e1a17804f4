//! Configuration, sweeps, reproduction presets and plot-data emission around
//! [`phasefeed_core`]. The `phasefeed` binary is a thin shell over this crate.

pub mod config;
pub mod error;
pub mod plots;
pub mod presets;
pub mod simulate;
pub mod sweep;

pub use config::{parse_policy, DvSetting, SimConfig, StateKind};
pub use error::{HarnessError, Result};
pub use presets::{run_preset, PresetReport, RunOptions};
pub use simulate::{simulate, SimulationRun, Summary};
pub use sweep::{run_sweep, SweepRow, SweepSpec};
