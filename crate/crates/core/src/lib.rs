//! Adversarial MDP workbench.
//!
//! Tabular episodic MDPs whose reward tensor is chosen by an oblivious
//! adversary each episode. Two learners are provided:
//!
//! - [`fpl::FplAgent`]: follow-the-perturbed-leader when the transition
//!   kernel is known.
//! - [`fpop::FpopAgent`]: follow-the-perturbed-optimistic-policy when it is
//!   not, planning with extended value iteration over L1 confidence sets.
//!
//! The [`harness`] runs seeded experiments with exact regret accounting and
//! the [`oracle`] module holds brute-force and Monte Carlo checks used by
//! the tests and by `amdp verify`.

pub mod adversary;
pub mod confidence;
pub mod error;
pub mod fpl;
pub mod fpop;
pub mod harness;
pub mod mdp;
pub mod oracle;
pub mod perturbation;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use mdp::{Dims, DeterministicPolicy, MdpSpec, RewardTensor, TransitionKernel};
pub use perturbation::ExpParams;
