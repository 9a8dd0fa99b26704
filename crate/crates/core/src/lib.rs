//! Data-side building blocks for type-aware open-ended question generation:
//! corpus handling, annotation ingestion, semantic graphs, templates and
//! evaluation metrics.

pub mod corpus;
pub mod error;
pub mod metrics;
pub mod parse;
pub mod semgraph;
pub mod synthetic;
pub mod template;
pub mod text;

pub use error::{CoreError, Result};
