//! Non-convex solvers for low-rank recovery problems with phase ambiguity:
//! phase retrieval (alternating projections, Wirtinger Flow), phase
//! synchronization (generalized power method) and unit-diagonal SDPs in
//! Burer-Monteiro form, together with landscape probes and benchmark runners.

pub mod burer_monteiro;
pub mod error;
pub mod harness;
pub mod io;
pub mod landscape;
pub mod numerics;
pub mod phase_retrieval;
pub mod phase_sync;
pub mod problems;

pub use error::{Error, Result};
