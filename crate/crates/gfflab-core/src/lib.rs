//! Cluster counts of level sets of the discrete Gaussian free field.
//!
//! The crate is organised bottom-up: [`lattice`] geometry, the [`green`] function,
//! Gaussian [`gaussian`] samplers, [`clusters`] and pivotal intensities, [`hermite`]
//! polynomials and Wick calculus, [`chaos`] expansions, [`kernels`] constants and
//! the Monte Carlo [`experiments`].

pub mod chaos;
pub mod clusters;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod green;
pub mod hermite;
pub mod kernels;
pub mod lattice;
pub mod numeric;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{Domain, LatticeBox, Site};
