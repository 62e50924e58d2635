//! Command line front end: dataset generation, restoration runs, SVD
//! benchmarks and figure data.

pub mod bench;
pub mod config;
pub mod error;
pub mod figures;
pub mod pgm;
pub mod pipeline;
pub mod presets;

pub use config::ExperimentConfig;
pub use error::StageError;
