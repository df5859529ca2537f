//! Numerical laboratory for the stochastic heat equation
//! `∂ₜu = ½Δu + σ(u)η` driven by Gaussian noise that is white in time and
//! spatially homogeneous with correlation `f`.

pub mod cli;
pub mod error;
pub mod fft;
pub mod islands;
pub mod kernels;
pub mod noise;
pub mod quad;
pub mod report;
pub mod solver;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
