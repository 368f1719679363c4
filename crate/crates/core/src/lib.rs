//! Translation-invariant allocations on periodic windows.
//!
//! The crate transports a diffuse measure onto an arbitrary measure on a one-
//! or two-dimensional torus. Diffuse measures are discretized into mass
//! elements; every construction returns an [`Allocation`] that splits each
//! element into pieces with destinations.
//!
//! * [`stable_alloc`]: point-optimal stable allocation with appetite.
//! * [`one_dim`]: cumulative functions, quantiles and the interval allocation on a line.
//! * [`layered`]: discrete destinations handled mass layer by mass layer.
//! * [`quantile`]: diffuse destinations via an auxiliary point process and
//!   cell-wise quantile transport.
//! * [`mixed`]: the general case, splitting the destination into discrete and diffuse parts.
//! * [`palm`]: balance, Palm and equivariance checks.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod allocation;
mod error;
pub mod layered;
pub mod measures;
pub mod mixed;
pub mod one_dim;
pub mod palm;
pub mod quantile;
pub mod sampling;
pub mod stable_alloc;

pub use allocation::{Allocation, Entry, Piece, Provenance};
pub use error::{AppetiteRule, Error, Result};
pub use measures::*;
