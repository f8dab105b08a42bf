//! Monte Carlo laboratory for Brownian flows with a singular outward radial drift.
//!
//! The flow `dφ = F(‖φ‖)/‖φ‖ u(φ) dt + dW` is simulated in the translated frame
//! `ψ = φ − W`, where every tracer follows a random ODE driven by the shared path
//! `B = −W`. A realization "hits" when some tracer comes within `1/N` of `B`.
//!
//! Modules:
//! - [`geometry`]: points, regions, drift fields and the radial kernels.
//! - [`noise`]: counter-based Gaussian streams and stored Brownian paths.
//! - [`bessel`]: Bessel SDEs, scale functions and the comparison chain.
//! - [`flow`]: tracer clouds, the split integrator, refinement and scaling.
//! - [`pathcover`]: sequential ball covers and exit-time statistics.
//! - [`occupation`]: occupation times, tail curves and the Ciesielski–Taylor check.
//! - [`regime`]: distance ladders, step probabilities and drift accumulators.
//! - [`harness`]: hitting-probability estimation and parameter sweeps.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod harness;
pub mod noise;
pub mod occupation;
pub mod pathcover;
pub mod regime;
pub mod stats;

pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowResult, RefinePolicy, TracerCloud};
pub use geometry::{DriftField, DriftProfile, PointN, Region};
pub use noise::{BrownianPath, NoiseStream, Schedule};
