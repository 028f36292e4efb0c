use serde::{Deserialize, Serialize};

use super::RoadNetwork;
use crate::{Error, Result};

/// Length of the simulated day in seconds (30 h, so late returns still fit).
pub const DAY_SECONDS: f64 = 30.0 * 3600.0;

/// One activity in an agent's chain. Times are seconds from midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    /// Building id.
    pub location: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desired_arrival: Option<f64>,
    /// Seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub desired_duration: Option<f64>,
    /// Planned departure. Defaults to `desired_arrival + desired_duration`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_time: Option<f64>,
    #[serde(default)]
    pub opening: f64,
    #[serde(default = "day_end")]
    pub closing: f64,
}

fn day_end() -> f64 {
    DAY_SECONDS
}

impl Activity {
    pub fn planned_departure(&self) -> Option<f64> {
        self.end_time.or(match (self.desired_arrival, self.desired_duration) {
            (Some(a), Some(d)) => Some(a + d),
            _ => None,
        })
    }

    /// End of the desired stay, used for the early-departure penalty.
    pub fn desired_end(&self) -> Option<f64> {
        match (self.desired_arrival, self.desired_duration) {
            (Some(a), Some(d)) => Some(a + d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPlan {
    pub agent_id: u32,
    pub activities: Vec<Activity>,
    #[serde(default)]
    pub is_probe: bool,
}

/// Plans file contents (`"format": "plans/1"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlansFile {
    pub format: String,
    pub agents: Vec<AgentPlan>,
}

impl PlansFile {
    pub const FORMAT: &'static str = "plans/1";

    pub fn validate(&self, network: &RoadNetwork) -> Result<()> {
        if self.format != Self::FORMAT {
            return Err(Error::invalid(format!(
                "unsupported plans format {:?}",
                self.format
            )));
        }
        for (i, p) in self.agents.iter().enumerate() {
            if p.agent_id as usize != i {
                return Err(Error::invalid(format!(
                    "agent ids must be 0..n in order, found {} at position {i}",
                    p.agent_id
                )));
            }
            p.validate(network)?;
        }
        Ok(())
    }

    pub fn probe_count(&self) -> usize {
        self.agents.iter().filter(|a| a.is_probe).count()
    }
}

impl AgentPlan {
    pub fn validate(&self, network: &RoadNetwork) -> Result<()> {
        let id = self.agent_id;
        if self.activities.is_empty() {
            return Err(Error::invalid(format!("agent {id} has no activities")));
        }
        if self.activities.len() > 120 {
            return Err(Error::invalid(format!("agent {id} has too many activities")));
        }
        for (q, a) in self.activities.iter().enumerate() {
            let Some(loc) = network.index_of(&a.location) else {
                return Err(Error::invalid(format!(
                    "agent {id}: unknown location {}",
                    a.location
                )));
            };
            if !network.is_building(loc) {
                return Err(Error::invalid(format!(
                    "agent {id}: activity location {} is not a building",
                    a.location
                )));
            }
            if q > 0 && self.activities[q - 1].location == a.location {
                return Err(Error::invalid(format!(
                    "agent {id}: consecutive activities at the same building {}",
                    a.location
                )));
            }
            let times = [
                a.desired_arrival,
                a.end_time,
                Some(a.opening),
                Some(a.closing),
            ];
            for t in times.into_iter().flatten() {
                if !(0.0..=DAY_SECONDS).contains(&t) {
                    return Err(Error::invalid(format!(
                        "agent {id}: time {t} outside the simulated day"
                    )));
                }
            }
            if a.desired_duration.is_some_and(|d| !(d >= 0.0)) {
                return Err(Error::invalid(format!("agent {id}: negative duration")));
            }
            if q + 1 < self.activities.len() && a.planned_departure().is_none() {
                return Err(Error::invalid(format!(
                    "agent {id}: activity {q} needs an end time or desired arrival and duration"
                )));
            }
        }
        Ok(())
    }
}
