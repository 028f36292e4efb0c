//! Scenario files, the SynthTown generator, ground-truth runs, tracking
//! runs and evaluation metrics.

mod file;
mod metrics;
mod snapshot;
mod synthtown;
mod track;
mod truth;

pub use file::{CompiledScenario, ObservationConfig, Scenario};
pub use metrics::{
    compute_metrics, mse_per_step, r_squared, r_squared_per_location, trip_metrics, MetricReport, TripMetrics,
};
pub use snapshot::{read_snapshot, write_snapshot};
pub use synthtown::{generate_synthtown, synthtown_network, SYNTHTOWN_AGENTS, SYNTHTOWN_PROBES, SYNTHTOWN_TAU};
pub use track::{
    evaluate_tracking, persistence_forecast, read_estimates, track, truth_at, write_estimates, HorizonEstimates, HorizonReport,
    TrackConfig, TrackOutput,
};
pub use truth::{
    probe_observations, read_counts, read_observations, simulate_ground_truth, trajectories_from_log, write_counts, write_observations,
    GroundTruth,
};
