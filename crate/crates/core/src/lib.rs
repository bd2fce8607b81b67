//! Amortized posterior inference for X-ray spectral fitting.
//!
//! A convolutional encoder compresses a binned spectrum into a context
//! vector, a conditional rational-quadratic spline flow turns that context
//! into a posterior over five physical parameters, and a recurrent decoder
//! maps parameter draws back to spectra. Around the network sit a simplified
//! spectral forward model, dataset tooling, a Metropolis–Hastings baseline
//! and the evaluation metrics used to compare them.

pub mod autodiff;
pub mod baseline;
mod binio;
pub mod dataset;
pub mod flow;
pub mod metrics;
pub mod parallel;
pub mod physics;
pub mod training;
