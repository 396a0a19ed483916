//! Spiraling self-similar singular solutions of complex linear parabolic
//! equations `u_t = ∂_k(A_kl ∂_l u)` with bounded, uniformly elliptic,
//! complex coefficients.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod quadrature;
pub mod interp;
pub mod profile;
pub mod coefficients;
pub mod fd;
pub mod spiral;
pub mod analysis;
pub mod evolution;
pub mod cli;

pub use error::{Error, Result};
