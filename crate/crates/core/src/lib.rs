//! Random dynamical systems generated by semilinear stochastic evolution
//! equations: Wiener paths and shifts, spectral-Galerkin cocycles and their
//! linearizations, stationary random points, Lyapunov spectra and local
//! stable/unstable manifolds.

// Validity checks are written as `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod linalg;
pub mod manifolds;
pub mod noise;
pub mod semiflow;
pub mod snapshot;
pub mod spectral_space;
pub mod spectrum;
pub mod stationary;
