//! Unitary cocycles over a hyperbolic toral automorphism.
//!
//! The crate is organised bottom-up: [`matalg`] is the dense complex
//! kernel, [`freemonoid`] and [`repstab`] recover a near-conjugacy between
//! two representations from their characters, [`dynamics`] and
//! [`cocycle`] supply the base map, its orbits and the holonomies of a
//! unitary cocycle over it, and [`livsic`] chains all of that into a solver
//! for the cohomological equation. [`surface`] runs the same inverse
//! problem for flat connections on a genus-2 surface. [`cli`] drives
//! batch experiments.

#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod cocycle;
pub mod dynamics;
pub mod freemonoid;
pub mod livsic;
pub mod matalg;
pub mod repstab;
pub mod rng;
pub mod surface;
pub mod tol;
