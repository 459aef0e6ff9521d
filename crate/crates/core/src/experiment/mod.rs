//! Configurable experiments with CSV series and JSON reports.

mod config;
mod report;
mod runner;

pub use config::{parse_config, ExperimentConfig, ExperimentKind, PartialConfig};
pub use report::{ExperimentReport, Table, Telemetry, Verdict, SCHEMA_VERSION};
pub use runner::{execute, run_experiment, terminal_samples, RunOutput, TerminalSamples, CONSERVATION_TOL, EIGEN_RATE_TOL, RATE_TOL, PARTICLE_COLLISION_RATE};
