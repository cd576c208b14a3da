//! Randomized nonlinear feature selection driven by centered kernel-target
//! alignment.
//!
//! The central routine, [`selector::randsel`], estimates how much each feature
//! is expected to add to the alignment between a Gaussian kernel on the data
//! and the label kernel, where the expectation runs over random feature
//! subspaces and row subsamples. Features are culled iteratively until a small
//! active set remains. Greedy kernel baselines ([`baselines::fohsic`],
//! [`baselines::bahsic`]), a linear correlation filter, synthetic dataset
//! generators, and a nested cross-validation harness round out the crate.

pub mod baselines;
pub mod contribution;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod kernel;
pub mod resample;
pub mod selector;

pub use error::{Error, Result};
