//! Utility-maximizing early termination of A/B experiments.
//!
//! The crate models a running experiment as a finite-horizon Bayesian
//! decision problem: a conjugate Gaussian outcome model with staggered
//! customer entry ([`conjugate`]), an episodic environment whose reward
//! balances opportunity cost against launch impact ([`env`]), a contextual
//! deep-Q learner with an exact dynamic-programming oracle ([`dqn`], [`dp`]),
//! classical sequential stopping rules for comparison ([`baselines`]), and a
//! simulation harness that evaluates them all on generated experiment cohorts
//! ([`harness`]).

pub mod baselines;
pub mod conjugate;
pub mod dp;
pub mod dqn;
pub mod env;
mod error;
pub mod harness;
pub mod nn;
pub mod normal;
pub mod policy;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
