//! Planning as inference: policies are improved by EM on rollouts drawn
//! from a belief state, with each decision weighted by the reward that
//! follows it.

mod em;
mod mixture;
mod policy;
mod tabular;
mod traffic;

pub use em::{
    e_step_posteriors, estimate_value, m_step_update, plan, sample_rollouts, value_with_error,
    ControlProblem, Decision, PlanConfig, PlanIteration, PlanResult, PlanStatus, Posteriors,
    RewardSegment, Rollout, RolloutBatch, UnitTrace,
};
pub use mixture::HorizonMixture;
pub use policy::{FeatureKey, Policy, ANY_BIN};
pub use tabular::MdpProblem;
pub use traffic::*;
