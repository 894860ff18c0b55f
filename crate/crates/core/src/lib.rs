//! Numerical toolkit for sublinear expectations driven by G-Brownian motion.
//!
//! * [`model`]: uncertainty sets, the generator `G`, grids, cylinder functionals.
//! * [`paths`]: controlled simulation of `(B, <B>)`, drift shifts, Girsanov densities.
//! * [`pde`]: explicit monotone scheme for the G-heat equation and nested cylinder chains.
//! * [`varrep`]: both sides of the variational formula for `log E^G(exp Phi)`.
//! * [`ldp`]: rate functionals, skeleton flows, capacities and large-deviation slopes.
//! * [`experiments`]: named experiment kinds behind a common trait, driven by the CLI.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod builtins;
pub mod config;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod ldp;
pub mod model;
pub mod output;
pub mod paths;
pub mod pde;
pub mod rng;
pub mod stats;
pub mod varrep;

pub use error::{Error, Result};
