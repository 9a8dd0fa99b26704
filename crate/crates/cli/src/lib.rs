//! Pipeline orchestration for type-aware question generation: config
//! loading, one function per pipeline stage, and run reports.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod protocol;
pub mod report;

pub use commands::{run, run_diversity_with, Command};
pub use config::PipelineConfig;
pub use error::{CliError, Result};
pub use protocol::{run_diversity, Generated, QuestionGenerator, TypePredictor};
pub use report::{CommandReport, Outcome};
