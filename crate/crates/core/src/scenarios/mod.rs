//! Scenario runner: builds a fabric and workload from a scenario file, runs
//! it to completion and reports per-request metrics, the event trace and any
//! invariant violations found on the way.

mod apps;
pub mod config;
pub mod delay;
pub mod fixtures;
pub mod metrics;
mod run;
pub mod sweep;

pub use apps::{ClientOutcome, ClientRequest, OriginServer};
pub use config::{ConfigError, ScenarioConfig};
pub use delay::{delay_decompose, Case, Decomposition, DelayError, Term};
pub use metrics::{RequestMetrics, RunMetrics, ServedBy};
pub use run::{run, RequestSpec, RunError, RunReport, World};
pub use sweep::{sweep, sweep_config, write_sweep_csv, SweepError, SweepRow};
