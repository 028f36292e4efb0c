//! Sequential Monte Carlo for kinetic models: the bootstrap particle filter
//! over the uniformized chain, ancestral-line smoothing, Monte Carlo EM for
//! rate constants, and count estimates with short-term prediction.

mod ensemble;
mod estimate;
mod filter;
mod learn;

pub use ensemble::{
    apply_selection, log_sum_exp, pf_mutate, pf_select, place_copies, systematic_counts,
    ParticleEnsemble, Selection,
};
pub use estimate::{estimate_state, summarize_counts, LocationEstimate};
pub use filter::{
    merge_stops, pf_smooth, run_filter, FilterConfig, FilterOutput, ParticleHistory,
    SmoothedTrajectory, StopCallback, Stop,
};
pub use learn::{
    frozen_objective, learn_rates, FrozenObjective, LearnConfig, LearnStep, RateModel, Segment,
    SegmentRecorder, TiedSkm,
};
