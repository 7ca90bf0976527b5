//! Parallel reinforcement-learning history matching.
//!
//! Reservoir permeabilities are tuned by a PPO agent that interacts with `N`
//! simulator environments at once. The crate is organized bottom-up:
//!
//! * [`field`]: grids, permeability fields, the stacked parameter vector, and
//!   correlated-noise scrambling.
//! * [`sim`]: the forward model (finite-volume single-phase flow with wells).
//! * [`objective`]: weighted least-squares mismatch and rewards.
//! * [`case`]: synthetic case construction and the case file.
//! * [`env`]: the MDP wrapper around a forward model.
//! * [`agent`]: MLP actor-critic, Gaussian policy, PPO, Adam.
//! * [`orchestrator`]: rollout collection across environments, training loop,
//!   solution archive, checkpoints.
//! * [`harness`]: presets, benchmark, validation, and plot data.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agent;
pub mod case;
pub mod env;
pub mod error;
pub mod field;
pub mod harness;
pub mod objective;
pub mod orchestrator;
pub mod parallel;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
