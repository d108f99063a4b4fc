//! Distributed computation of outer Löwner-John ellipsoids for the
//! intersection of `N` ellipsoids `E(P_i)`, one per agent.
//!
//! Each agent `i` owns a coordinate `x_i` with weight `λ_i = x_i² / N`. Until
//! the deadline `T_c` the agents only run an exact dynamic consensus protocol
//! ([`edc`]) that tracks `s(x) = ‖x‖²/N` and `Q(x) = (1/N) Σ x_i² P_i⁻¹`.
//! After `T_c` each agent follows a projected gradient flow ([`pgf`]) on the
//! manifold `1 - ε ≤ s(x) ≤ 1`. [`sim`] integrates the whole network,
//! [`oracle`] solves the centralized problem on the simplex and [`fusion`]
//! applies the resulting weights to covariance intersection.
//!
//! The `parallel` feature (default) enables rayon for independent work items
//! (multi-start oracle, containment sampling, sweeps); see [`par`].

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cost;
pub mod edc;
pub mod ellipsoid;
pub mod error;
pub mod experiment;
pub mod export;
pub mod fusion;
pub mod graph;
pub mod instance;
pub mod matrix;
pub mod oracle;
pub mod par;
pub mod pgf;
pub mod sim;
pub mod tuning;

pub use error::{Error, Result};
