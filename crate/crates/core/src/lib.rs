//! Sampling rate distortion functions for jointly Gaussian sources observed
//! through a fixed subset of components.
//!
//! * [`model`]: covariance models, sampling sets and block partitions.
//! * [`srdf`]: weighted-MSE reverse water-filling, `ρ_A(Δ)` and its inverse.
//! * [`gmf`]: Gaussian memoryless fields on `[0, 1]` and sampling-point placement.
//! * [`universal`]: parameterized families, ambiguity atoms, Bayesian and
//!   nonBayesian universal SRDfs.
//! * [`setopt`]: exhaustive search for the best fixed sampling set.
//! * [`simulate`]: Monte Carlo validation of the quantize-then-lift code.

pub mod error;
pub mod gmf;
pub mod model;
pub mod setopt;
pub mod simulate;
pub mod srdf;
pub mod universal;

pub use error::{Error, Result};
pub use model::{partition, validate_covariance, BlockPartition, CovarianceModel, SamplingSet};
pub use srdf::{
    distortion_rate, srdf, srdf_curve, waterfill, SrdfCurve, SrdfPoint, WaterfillSolution,
    WeightMatrix,
};
