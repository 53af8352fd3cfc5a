//! Experiment orchestration: configuration, the N-sweep, validation and
//! report output.

pub mod config;
pub mod experiments;
pub mod table;
pub mod validate;

pub use config::{ExperimentConfig, Norm, NormSpec};
pub use experiments::{error_norm, run_convergence, run_flowmap, simulate, FlowReport, RunSeeds, Simulation};
pub use table::{ErrorRow, ErrorTable, Format};
pub use validate::{validate, ValidationReport};
