//! Nonparametric identification of (controlled) stochastic differential
//! equations from sample paths.
//!
//! The pipeline has two stages. Step 1 estimates the time-indexed
//! probability density `p(t, x)` of the observed process with a kernel
//! smoother interpolated in time. Step 2 recovers drift and diffusion
//! coefficients by kernel ridge regression on the Fokker-Planck residual
//! `dp/dt - L* p`, optionally with pointwise non-negativity constraints on
//! the diffusion (solved through a dual quadratic program) and a Nystroem
//! low-rank variant. Recovered coefficients can be re-simulated with an
//! Euler-Maruyama integrator and compared against the data-generating
//! process.

pub mod blas;
pub mod controlled;
pub mod dataset;
pub mod density;
pub mod error;
pub mod fastmath;
pub mod fp;
pub mod kernel;
pub mod linalg;
pub mod points;
pub mod processes;
pub mod simulate;

pub use error::{CoreError, Result};
