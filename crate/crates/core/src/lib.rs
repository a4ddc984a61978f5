//! Spectral-Galerkin simulation of a stochastic Burgers system: a scalar mean
//! flow `U(t)` coupled to a Dirichlet velocity field `v(t, x)` on `(0, 1)`,
//! both driven by white noise, plus the statistics used to check its
//! long-time behaviour.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod decomposition;
pub mod dynamics;
pub mod ergodicity;
pub mod error;
pub mod io;
pub mod noise;
pub mod spectral;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
