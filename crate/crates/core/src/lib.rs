//! Gaussian-process inference under posterior tempering.
//!
//! * [`regression`]: exact GP regression and its tempered predictive.
//! * [`classification`]: softmax GP classification sampled with elliptical
//!   slice sampling at any temperature.
//! * [`probe`]: probability that relabeling a training input yields a
//!   different label.

pub mod classification;
pub mod data;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod probe;
pub mod quad;
pub mod regression;
pub mod rng;
pub mod sweep;

pub use error::{Error, Result};
