//! Files, experiment configuration and the command-line driver around
//! [`rfunlearn_core`].
//!
//! Artifacts live in a working directory: raw IQ recordings with a JSON
//! manifest, spectrogram caches, model parameters, forget vectors and
//! combination coefficients in small versioned binary formats, and metrics
//! as CSV rows with JSON traces.

mod bin_io;
pub mod clock;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod logging;
pub mod manifest;
pub mod metrics;
pub mod workdir;

pub use error::{Error, Result};
pub use rfunlearn_core;
