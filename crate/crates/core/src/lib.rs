//! EEG and clinical-text representation learning.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod eeg_encoder;
pub mod eval;
pub mod error;
pub mod heads;
pub mod io;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod signal;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
