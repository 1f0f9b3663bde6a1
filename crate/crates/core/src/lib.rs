//! Multilevel fixed-point Monte Carlo estimators for Bellman equations of
//! discounted Markov decision processes and optimal stopping problems.
//!
//! * [`model`] defines the control, general fixed-point and stopping model
//!   traits, the finite and continuous test models, and the stopping
//!   augmentation.
//! * [`rng`] derives reproducible, independent random streams for every node
//!   of the recursive sampling tree.
//! * [`mlfp`] implements the recursive estimators.
//! * [`theory`] evaluates the convergence constants, error bounds and cost
//!   recursions.
//! * [`oracle`] computes exact solutions of finite models.
//! * [`harness`] runs replication experiments and writes reports.

pub mod harness;
pub mod mlfp;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod theory;

pub use mlfp::{mlfp_general, mlfp_q, mlfp_stopping, MlfpError, MlfpParams};
pub use rng::{CostLedger, StreamKey, ThetaPath, STREAM_ALGORITHM_VERSION};
pub use theory::TheoryConstants;
