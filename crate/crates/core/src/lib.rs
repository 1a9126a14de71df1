//! Two-qubit quantum state verification.
//!
//! Builds the non-adaptive and LOCC-adaptive verification strategies for the
//! family `|Ψ(θ)> = cosθ|HV> - sinθ|VH>`, evaluates their sample complexity
//! and rejection-robust confidence bounds, simulates verification runs, and
//! plays the adaptive feed-forward protocol as message passing between
//! Alice, Bob and a referee that holds the joint state.

pub mod error;
pub mod protocol;
pub mod quantum;
pub mod simulator;
pub mod statistics;
pub mod strategies;

pub use error::{QsvError, Result};
