//! Detection of a sparse `m × n` active submatrix inside an `M × N` matrix of
//! heterogeneous Gaussian sequence observations.
//!
//! Every cell `(i, j)` carries a sequence `x_{ij,k} = ξ_{ij} θ_{ij,k} + ε σ_k η_{ij,k}`
//! indexed by a signed frequency `k`, with noise growing polynomially in `|k|`
//! (mildly ill-posed inverse problem). Under the alternative the active cells
//! form a submatrix and carry signals from a Sobolev ellipsoid with energy at
//! least `r²`.
//!
//! The crate is organized as:
//!
//! - [`model`]: configuration, noise schedule, supports, signal banks and seeded data generation.
//! - [`extremal`]: the max–min weight program, solved exactly on the frequency lattice and in closed form.
//! - [`stats`]: weighted χ² cell statistics, the aggregate χ² test, the scan test and their thresholds.
//! - [`boundary`]: detection-boundary radii and finite-sample condition checks.
//! - [`probe`]: mixture likelihood ratio, Bayes-risk Monte Carlo and checkers for the moment generating function and tail dominance.
//! - [`harness`]: experiment orchestration behind the `subdetect` CLI.

pub mod boundary;
pub mod error;
pub mod extremal;
pub mod harness;
pub mod model;
pub mod probe;
pub mod stats;
pub mod streams;

pub use error::{Error, Result};
