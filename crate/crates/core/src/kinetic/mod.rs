//! Stochastic kinetic models.
//!
//! A model is a set of events, each firing with a state-dependent hazard
//! `h_v(x, a)`. The continuous-time process is simulated with the Gillespie
//! direct method; the discrete-time process lives on a grid of step `tau`
//! where each step fires at most one event with probability `tau * h_v`.
//!
//! [`KineticModel`] is the common interface. [`Skm`] is the general
//! reaction-network implementation; the traffic model implements the same
//! trait with per-agent movement events.

mod path;
mod schema;
mod sim;

pub use path::{
    discrete_path_log_probability, path_log_probability, ActionSequence, PathRecord,
};
pub use schema::{EventDef, EventSchema, PopulationState, RateLaw, Skm, SkmDefinition};
pub use sim::{
    advance, discrete_step_distribution, gillespie_run, gillespie_step, sample_geometric,
    step_discrete, total_rate, GillespieStep, StepDistribution, StepObserver,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A Markov jump process defined by a finite set of events.
///
/// Hazards may depend on the current time (piecewise constant between the
/// instants reported by [`KineticModel::next_rate_change`]) and on an action.
pub trait KineticModel: Sync {
    type State: Clone + Send + Sync;
    type Action: ?Sized + Sync;

    fn num_events(&self) -> usize;

    /// Appends `(event, h_v)` for every event whose hazard is nonzero.
    fn hazards(
        &self,
        state: &Self::State,
        t: f64,
        action: &Self::Action,
        out: &mut Vec<(usize, f64)>,
    );

    /// `h_0 = sum_v h_v`.
    fn total_hazard(&self, state: &Self::State, t: f64, action: &Self::Action) -> f64 {
        let mut buf = Vec::new();
        self.hazards(state, t, action, &mut buf);
        buf.iter().map(|(_, h)| h).sum()
    }

    /// Event whose cumulative-hazard interval contains `target` in `[0, h_0)`.
    fn select_event(
        &self,
        state: &Self::State,
        t: f64,
        action: &Self::Action,
        target: f64,
    ) -> usize {
        let mut buf = Vec::new();
        self.hazards(state, t, action, &mut buf);
        let mut acc = 0.0;
        for &(v, h) in &buf {
            acc += h;
            if target < acc {
                return v;
            }
        }
        buf.last().map(|&(v, _)| v).expect("select_event on zero hazard")
    }

    fn apply(&self, state: &mut Self::State, event: usize);

    /// Applies state changes that are triggered by the clock rather than by
    /// events (scheduled releases), for everything due at or before `t`.
    fn catch_up(&self, _state: &mut Self::State, _t: f64) {}

    /// First time strictly after `t` at which hazards may change without any
    /// event firing. Time-homogeneous models return infinity.
    fn next_rate_change(&self, _state: &Self::State, _t: f64, _action: &Self::Action) -> f64 {
        f64::INFINITY
    }

    /// Short human-readable state summary for diagnostics.
    fn describe(&self, _state: &Self::State) -> String {
        "<state>".to_string()
    }
}

/// Equally spaced time points `0, tau, 2 tau, ...` with uniformization rate
/// `1 / tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub tau: f64,
    /// Number of steps `T`.
    pub horizon: u64,
}

impl TimeGrid {
    pub fn new(tau: f64, horizon: u64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {tau}")));
        }
        Ok(Self { tau, horizon })
    }

    pub fn uniformization_rate(&self) -> f64 {
        1.0 / self.tau
    }

    pub fn time_of(&self, step: u64) -> f64 {
        step as f64 * self.tau
    }

    /// First grid step whose time is at or after `t`.
    pub fn step_at_or_after(&self, t: f64) -> u64 {
        if t <= 0.0 {
            return 0;
        }
        let s = t / self.tau;
        let r = s.round();
        // absorb floating noise when t sits on the grid
        if (s - r).abs() < 1e-9 {
            r as u64
        } else {
            s.ceil() as u64
        }
    }

    pub fn end_time(&self) -> f64 {
        self.time_of(self.horizon)
    }
}
