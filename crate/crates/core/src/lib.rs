//! Multi-gene genetic programming for symbolic regression with
//! linear-combination-of-features (LCF) leaves.
//!
//! An LCF leaf evaluates `a + b·x` over every input feature. Its weights are
//! tuned by Gaussian mutation, by backpropagation with iRprop⁻, or both, and
//! may be shared between leaves of the same feature index within an
//! individual or across the whole population.

pub mod backprop;
pub mod bench;
pub mod cli;
pub mod evolve;
pub mod exprtree;
pub mod fitness;
pub mod stats;
