//! Configuration files and on-disk formats.

pub mod config;
pub mod formats;

pub use config::{NoiseConfig, PathsConfig, RunConfig, SolverConfig};
pub use formats::{ObservationFile, ReportRow, RunLog, Section, SectionGrid};
