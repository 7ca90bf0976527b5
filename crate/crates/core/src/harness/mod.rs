//! Case presets, the scalability benchmark, holdout validation and plot data.

pub mod bench;
pub mod plotdata;
pub mod presets;
pub mod validate;

pub use bench::{run_bench, BenchRow, BenchRun, BenchSpec, BenchTable};
pub use presets::Preset;
pub use validate::{forecast, validate_entries, validate_solutions, Bias, Forecast, ValidationReport, ValidationRow};
