//! Every numerical threshold the library uses, in one record.
//!
//! Modules take a `&Tolerances` (or read [`Tolerances::DEFAULT`]) instead of
//! hardcoding literals, so a run config can override them in one place.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Largest accepted `||U*U - I||` when a unitary is constructed.
    pub construction: f64,
    /// Residual target for linear solves and span membership.
    pub solve: f64,
    /// Relative singular-value cutoff for rank and nullspace decisions.
    pub rank: f64,
    /// Gram matrices at or above this condition number are rejected.
    pub gram_condition: f64,
    /// Products longer than this are re-projected onto the unitary group.
    pub reproject_every: usize,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances { construction: 1e-10, solve: 1e-9, rank: 1e-8, gram_condition: 1e12, reproject_every: 64 };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}
