//! Pseudospectral toolkit for periodic homogenization of SDEs driven by
//! additive alpha-stable noise with singular (distribution-valued) periodic
//! drift.
//!
//! The crate computes, on the Fourier side of the torus:
//! enhanced (paracontrolled) drifts, Fokker-Planck and backward Kolmogorov
//! evolutions, invariant densities, correctors of the cell problem, effective
//! diffusivities and spectral gaps; and it verifies the resulting central
//! limit behavior by Monte Carlo simulation of the underlying paths.
//!
//! Start with the runnable programs in `examples/` (one per capability) or
//! the `levyhom` binary, which exposes the same pipelines behind subcommands.

pub mod cell_problem;
pub mod dense;
pub mod drift;
pub mod error;
pub mod fokker_planck;
pub mod levy_generator;
pub mod paracalc;
pub mod pipeline;
pub mod sde_mc;
pub mod torus_spectral;

pub use error::{Error, Result};
