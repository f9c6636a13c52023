//! Input-perturbation unlearning for RF fingerprint classifiers.
//!
//! This crate is the allocation-only core: it simulates impaired transmitters,
//! turns IQ bursts into normalized spectrograms, trains a small convolutional
//! classifier with exact backpropagation, and optimizes a universal additive
//! forget vector that makes the frozen classifier stop recognizing chosen
//! devices. File formats, timing and the command line live in the `rfunlearn`
//! companion crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod digest;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod fft;
pub mod gradcheck;
pub mod rfsim;
pub mod rng;
pub mod tinynet;
pub mod trainer;
pub mod unlearn;

pub use error::{Error, Result};
