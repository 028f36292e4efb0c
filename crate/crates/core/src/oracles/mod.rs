//! Exact reference computations for small instances: forward-backward on
//! finite hidden Markov models, value iteration and policy evaluation on
//! tabular MDPs, and brute-force enumeration of the uniformized chain.
//!
//! Everything here is unoptimized on purpose; it exists to check the Monte
//! Carlo machinery.

mod hmm;
mod mdp;
mod paths;

pub use hmm::{forward_backward, DiscreteHmm, ForwardBackward};
pub use mdp::{policy_evaluation, random_mdp, value_iteration, TabularMdp};
pub use paths::{enumerate_paths, skm_to_hmm};
