//! Experiment orchestration, persistence and the command-line interface of vortexlab.

pub mod config;
pub mod constants;
pub mod corpus;
pub mod error;
pub mod fit;
pub mod lemma;
pub mod output;
pub mod run;
pub mod scaling;
pub mod stability;

pub use error::{HarnessError, Result};
