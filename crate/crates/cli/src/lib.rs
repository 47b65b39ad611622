//! Command-line harness: reads scenario files, runs the pricing algorithms, and writes
//! deterministic JSON and CSV reports.

pub mod commands;
pub mod error;
pub mod report;
pub mod scenario;

pub use commands::{dispatch, execute, Verb};
pub use error::{CliError, ErrorRecord};
pub use report::{CompareRecord, RunRecord, ValidateRecord};
pub use scenario::{AlgorithmSpec, Overrides, Scenario};
