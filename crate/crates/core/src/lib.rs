//! Simulation and post-processing of randomized benchmarking for
//! passive linear optics.
//!
//! The protocol: prepare a number state on m modes, apply a sequence of
//! independently Haar-random passive transformations, measure photon
//! numbers, and repeat over sequence lengths. Irrep-resolved filter
//! functions turn the recorded (outcome, circuit) pairs into signals
//! that decay exponentially in the sequence length; the decay rates
//! estimate irrep-resolved process fidelities of the noise.
//!
//! Modules:
//! - [`repcore`]: shapes, Gelfand-Tsetlin patterns, dimensions, duals.
//! - [`cg`]: Clebsch-Gordan tables for U(m) tensor couplings, built by
//!   highest-weight null spaces plus lowering recursion, with a
//!   deterministic on-disk cache.
//! - [`linopt`]: permanents, number-state transition amplitudes,
//!   Haar sampling, loss, and the experiment simulator.
//! - [`filter`]: frame eigenvalues, irrep filter functions for
//!   number-resolved outcomes, and signal estimation.
//! - [`analysis`]: exponential decay fits, fidelity aggregation,
//!   sequence-length and sample-complexity bounds, filter moments.
//! - [`heterodyne`]: the same pipeline for heterodyne (coherent-state)
//!   measurements, plus Gaussian moment integrals and a Husimi sampler.

pub mod analysis;
pub mod cg;
pub mod error;
pub mod filter;
pub mod heterodyne;
pub mod linopt;
pub mod repcore;

pub use error::{Error, Result};
pub use repcore::{FockVector, GTPattern, IrrepLabel, Shape};
