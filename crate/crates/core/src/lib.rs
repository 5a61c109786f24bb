//! Exact knockoffs for Markov chains and hidden Markov models, rival
//! negative-control constructions, importance statistics, FDR filters and a
//! seeded experiment harness.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod io;
pub mod knockoffs;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod selection;
pub mod stats;

pub use error::{Error, Result};
