//! Spectral-Galerkin simulation of the stochastic Schrödinger-Poisson /
//! Landau-Lifshitz-Gilbert system on one-dimensional domains, with a
//! diagnostics harness for its conservation laws and energy identities.

// `!(x > 0.0)` guards are intentional: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod harness;
pub mod noise;
pub mod oracle;

pub use error::{Error, Result};
