//! Road traffic as a stochastic kinetic model.
//!
//! Locations (links and buildings) play the role of species and each vehicle
//! move `p_i . l_j -> p_i . l_k` is an event. Vehicles follow their activity
//! chains: they become ready to leave a building at their planned departure,
//! then move link by link along routes that get one hop closer to the next
//! activity. Link exit rates are `free_speed / length` per vehicle, reduced
//! once the link holds more vehicles than its capacity.

mod model;
mod network;
mod observation;
mod plans;
mod record;
mod scoring;

pub use model::{
    compile_scenario, planned_schedule, Lane, ReleaseSchedule, RouteWeights, TrafficModel,
    TrafficState, NO_CHOICE,
};
pub use network::{
    BuildingDef, LinkDef, Location, LocationKind, NetworkFile, NodeDef, RoadNetwork,
};
pub use observation::{observation_log_likelihood, Hypergeometric, LogFactorials, ObservationModel};
pub use plans::{Activity, AgentPlan, PlansFile, DAY_SECONDS};
pub use record::{
    move_records, read_event_log, replay_counts, write_event_log, EventKind, EventRecord, Recorder,
};
pub use scoring::{
    rate_segments, reward_to_probability, score_trajectory, AgentTrajectory, RateSegment,
    RewardBounds, ScoringConfig,
};
