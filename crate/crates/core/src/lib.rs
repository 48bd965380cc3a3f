//! Instruction following as differentiable Bayesian state tracking.
//!
//! The crate is `no_std` + `alloc`. It contains the whole learned agent:
//!
//! - [`tensor`]: dense arrays, a reverse-mode tape and the Adam optimizer.
//! - [`gridsim`]: procedural 2.5-D worlds, panoramic scans, navigation graphs
//!   and template instructions.
//! - [`mapper`]: ground-plane feature projection and the sparse convolutional
//!   GRU that maintains the semantic map.
//! - [`langmodel`]: instruction encoder and the two-headed attention decoder.
//! - [`filter`]: histogram belief, learned motion kernels, language-conditioned
//!   likelihoods and the goal prediction loop.
//! - [`policy`]: reactive viewpoint policy over belief features.
//! - [`agent`]: the assembled filter agent and the direct goal predictor.
//! - [`trainer`]: rollouts, losses and single optimisation steps.
//! - [`eval`]: navigation metrics and the goal prediction baselines.
//!
//! Enable the `std` feature for runtime SIMD detection in the matrix kernels.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod agent;
pub mod config;
pub mod error;
pub mod eval;
pub mod filter;
pub mod gridsim;
pub mod langmodel;
pub mod mapper;
pub mod nn;
pub mod policy;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
