//! Benchmark harness around the `offgrid_sbl` estimators: TOML scenarios,
//! paired Monte Carlo runs with CSV output, single-run traces and DFT
//! leakage profiles.

pub mod bench;
mod error;
pub mod leakage;
pub mod presets;
pub mod scenario;

pub use bench::{run_benchmark, run_single, summarize, BenchOptions, BenchRecord, SummaryRow};
pub use error::{BenchError, Result};
pub use leakage::{run_leakage, LeakageRequest, LeakageRow};
pub use scenario::{Method, Scenario, SweepPoint};
